#include "linkguard/rewriter.hpp"

#include <json.hpp>

namespace linkguard {

namespace {

constexpr std::string_view kPreamble =
    "As a text rewriting tool, you are given a text along with a list of spans occurring in that text. "
    "You must edit the text such that EVERY span in the list is replaced. The replacements must ensure that "
    "the original span no longer appears as such in the text. But the changes can be small, such as removing "
    "or inserting an adjective or adverb, using a close synonym, paraphrasing part of the span, or changing "
    "verb tense. The overall meaning should be retained as much as possible. You can also rewrite the words "
    "around the span if needed.\n"
    "\n"
    "Many named entities have already been replaced by [REDACTED], but not all. If one of the spans to "
    "replace is a named entity (person name, place, organisation, acronym, etc.) or another highly specific "
    "term impossible to rephrase, you should replace it by [REDACTED]. Never attempt to replace an entity by "
    "inventing a new name.\n"
    "\n"
    "Only use [REDACTED] if there are really no other options to edit the span (if the span is larger than "
    "the entity, you should first edit the other words), and avoid redacting article numbers.\n"
    "\n"
    "Examples:\n"
    "\n"
    "Text: The quick brown fox jumps over the lazy dog.\n"
    "\n"
    "Span(s) to replace: \"quick brown fox\", \"over the lazy dog\"\n"
    "\n"
    "Output: The fast brown fox jumps above the lazy dog.\n"
    "\n"
    "Text: The Kalininskiy District Court of Appeal upheld the decision of the lower court.\n"
    "\n"
    "Span(s) to replace: \"Kalininskiy District Court of Appeal\", \"of the lower court\"\n"
    "\n"
    "Output: The [REDACTED] Court of Appeal upheld the decision made by the lower court.\n"
    "\n"
    "Text: The applicant was charged with theft and sentenced to five years in prison.\n"
    "\n"
    "Span(s) to replace: \"theft\", \"five years in prison\"\n"
    "\n"
    "Output: The applicant was accused of stealing and given a five-year prison term.\n"
    "\n"
    "Text: The appeal was filed on June 5, 2020 to the District Court of Novosibirsk\"\n"
    "\n"
    "Span(s) to replace: \"The appeal\", \"June 5, 2020\", \"of Novosibirsk\"\n"
    "\n"
    "Output: This appeal was filed on June 5th, 2020 to the District Court of [REDACTED].\n"
    "\n"
    "Text: The judge reviewed the evidence and ruled in favour of the prosecution.\n"
    "\n"
    "Span(s) to replace: \"reviewed the evidence\", \"ruled in favour of the\"\n"
    "\n"
    "Output: The judge reviewed the available evidence and decided to side with the prosecution.\n"
    "\n"
    "Text: The judge examined the witness statements and delivered his final judgment.\n"
    "\n"
    "Span(s) to replace: \"examined the witness statements\", \"delivered his final\"\n"
    "\n"
    "Output: The witness statements were examined by the judge, who delivered afterwards his final judgment.\n"
    "\n"
    "You should first output a short reasoning (max 100 words) and then output a JSON object with one single "
    "field, 'edited_text', containing the entire modified text with ALL the given spans replaced by an "
    "alternative.\n"
    "\n"
    "Now, here is the text to edit and the spans to replace:\n"
    "\n"
    "Text: ";

constexpr std::string_view kSpansLabel = "\n\nSpan(s) to replace: ";

}  // namespace

std::string build_prompt(std::string_view text, const std::vector<std::string>& span_surfaces) {
    if (span_surfaces.empty()) throw UsageError("cannot build a rewriting prompt without spans");
    std::string prompt(kPreamble);
    prompt += text;
    prompt += kSpansLabel;
    for (std::size_t i = 0; i < span_surfaces.size(); ++i) {
        if (i > 0) prompt += ", ";
        prompt += '"';
        prompt += span_surfaces[i];
        prompt += '"';
    }
    return prompt;
}

std::string build_prompt(const Chunk& chunk) {
    std::vector<std::string> surfaces;
    surfaces.reserve(chunk.spans.size());
    for (const auto& span : chunk.spans) surfaces.push_back(span.surface);
    return build_prompt(chunk.text, surfaces);
}

std::optional<PromptSlots> extract_prompt_slots(std::string_view prompt) {
    if (!prompt.starts_with(kPreamble)) return std::nullopt;
    const auto label = prompt.rfind(kSpansLabel);
    if (label == std::string_view::npos || label < kPreamble.size()) return std::nullopt;
    PromptSlots slots;
    slots.text = std::string(prompt.substr(kPreamble.size(), label - kPreamble.size()));
    auto list = prompt.substr(label + kSpansLabel.size());
    if (list.size() < 2 || list.front() != '"' || list.back() != '"') return std::nullopt;
    list = list.substr(1, list.size() - 2);
    constexpr std::string_view kSeparator = "\", \"";
    while (true) {
        const auto sep = list.find(kSeparator);
        slots.spans.emplace_back(list.substr(0, sep));
        if (sep == std::string_view::npos) break;
        list = list.substr(sep + kSeparator.size());
    }
    return slots;
}

namespace {

// End (exclusive) of the JSON object opening at `open`, honouring strings,
// or npos when the braces never balance.
std::size_t object_end(std::string_view s, std::size_t open) {
    int depth = 0;
    bool in_string = false;
    for (std::size_t i = open; i < s.size(); ++i) {
        const char c = s[i];
        if (in_string) {
            if (c == '\\') {
                ++i;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) return i + 1;
        }
    }
    return std::string_view::npos;
}

}  // namespace

std::string parse_response(std::string_view completion) {
    std::optional<std::string> found;
    for (std::size_t i = completion.find('{'); i != std::string_view::npos; i = completion.find('{', i)) {
        const auto end = object_end(completion, i);
        if (end == std::string_view::npos) {
            ++i;
            continue;
        }
        auto object = nlohmann::json::parse(completion.substr(i, end - i), nullptr, false);
        if (object.is_discarded() || !object.is_object()) {
            ++i;
            continue;
        }
        auto field = object.find("edited_text");
        if (field != object.end() && field->is_string()) found = field->get<std::string>();
        i = end;
    }
    if (!found) throw ParseFailure("completion contains no JSON object with a string 'edited_text'");
    if (found->empty()) throw ParseFailure("'edited_text' is empty");
    return *found;
}

}  // namespace linkguard
