#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace dslab {

// Closed token vocabulary shared by the text tower and the toy LM. Built from
// the caption/instruction/prompt grammar plus the 2-decimal coordinate tokens,
// so every text the pipeline produces tokenizes without <unk>.
struct Vocab {
  std::vector<std::string> tokens;
  std::unordered_map<std::string, int> index;
  int unk_id = 0;
  int img_id = 0;
  int bos_id = 0;
  int eos_id = 0;

  std::size_t size() const { return tokens.size(); }
  int id(const std::string& token) const {
    auto it = index.find(token);
    return it == index.end() ? unk_id : it->second;
  }
  const std::string& token(int id) const { return tokens[static_cast<std::size_t>(id)]; }
};

Vocab build_vocab(const std::vector<std::string>& scene_vocab,
                  const std::vector<std::string>& object_vocab);

// lowercase, whitespace split; '[' ']' ',' '?' ':' become single tokens
std::vector<std::string> tokenize_words(const std::string& text);
std::vector<int> tokenize(const Vocab& vocab, const std::string& text);

// inverse rendering with compact punctuation (no space inside "[a,b,c,d]")
std::string detokenize(const Vocab& vocab, const std::vector<int>& ids);

}  // namespace dslab
