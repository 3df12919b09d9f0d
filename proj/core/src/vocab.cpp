#include "dslab/vocab.hpp"

#include <cctype>
#include <cstdio>

namespace dslab {

namespace {

// every non-label word the template grammar can produce
const char* kGrammarWords[] = {
    "a",        "an",       "and",      "appear",   "are",      "assistant",
    "at",       "average",  "because",  "camera",   "close",    "closer",
    "consider", "containing", "contains", "depth",  "describe", "detail",
    "does",     "empty",    "far",      "farther",  "farthest", "from",
    "in",       "is",       "it",       "its",      "map",      "near",
    "nearest",  "no",       "not",      "object",   "objects",  "occupies",
    "of",       "one",      "or",       "present",  "quickly",  "reach",
    "region",   "scene",    "show",     "smaller",  "the",      "these",
    "this",     "to",       "type",     "user",     "viewpoint", "want",
    "what",     "which",    "you",      ".",
};

bool is_split_char(char c) {
  return c == '[' || c == ']' || c == ',' || c == '?' || c == ':';
}

}  // namespace

Vocab build_vocab(const std::vector<std::string>& scene_vocab,
                  const std::vector<std::string>& object_vocab) {
  Vocab v;
  auto push = [&v](const std::string& tok) {
    if (v.index.count(tok)) return;
    v.index.emplace(tok, static_cast<int>(v.tokens.size()));
    v.tokens.push_back(tok);
  };
  push("<unk>");
  push("<img>");
  push("<bos>");
  push("<eos>");
  v.unk_id = v.index.at("<unk>");
  v.img_id = v.index.at("<img>");
  v.bos_id = v.index.at("<bos>");
  v.eos_id = v.index.at("<eos>");

  for (const char* p : {"[", "]", ",", "?", ":"}) push(p);
  // normalized 2-decimal coordinates 0.00 .. 1.00
  for (int i = 0; i <= 100; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%.2f", i / 100.0);
    push(buf);
  }
  for (const char* w : kGrammarWords) push(w);
  for (const std::string& s : scene_vocab) push(s);
  for (const std::string& s : object_vocab) push(s);
  return v;
}

std::vector<std::string> tokenize_words(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (char raw : text) {
    const char c = static_cast<char>(
        std::tolower(static_cast<unsigned char>(raw)));
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (is_split_char(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur.push_back(c);
    }
  }
  flush();
  return out;
}

std::vector<int> tokenize(const Vocab& vocab, const std::string& text) {
  std::vector<int> ids;
  for (const std::string& w : tokenize_words(text)) ids.push_back(vocab.id(w));
  return ids;
}

std::string detokenize(const Vocab& vocab, const std::vector<int>& ids) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    const bool no_space_before =
        tok == "]" || tok == "," || tok == "?" || tok == "." || tok == ":";
    const bool prev_suppresses =
        !out.empty() && (out.back() == '[' || out.back() == ',');
    if (!out.empty() && !no_space_before && !prev_suppresses) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace dslab
