#include <fmt/format.h>

#include "synthrank/error.hpp"
#include "synthrank/synth_gen.hpp"
#include "synthrank/text.hpp"

namespace synthrank {

PromptTemplate::PromptTemplate(std::vector<FewShotExample> examples)
    : examples_(std::move(examples)) {
  if (examples_.size() != 3) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("prompt template needs exactly 3 examples, got {}", examples_.size()));
  }
  for (std::size_t i = 0; i < examples_.size(); ++i) {
    if (text::trim(examples_[i].document_text).empty() ||
        text::trim(examples_[i].relevant_query).empty()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("prompt example {} has an empty document or query", i + 1));
    }
  }
}

std::string build_prompt(const PromptTemplate& tmpl, std::string_view target_doc_text) {
  if (text::trim(target_doc_text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "prompt target document is empty");
  }
  std::string out;
  int n = 1;
  for (const auto& ex : tmpl.examples()) {
    out += fmt::format("Example {}:\nDocument: {}\nRelevant Query: {}\n\n", n++,
                       text::collapse_newlines(ex.document_text),
                       text::collapse_newlines(ex.relevant_query));
  }
  out += fmt::format("Example {}:\nDocument: {}\nRelevant Query:", n,
                     text::collapse_newlines(target_doc_text));
  return out;
}

}  // namespace synthrank
