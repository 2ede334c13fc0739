#pragma once

// Deterministic toy world for the pairing, training and evaluation tests.
// Posts and responses are built from per-topic word pools; each persona has
// its own disjoint set of style markers that open and close its messages.

#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "persona/corpus.hpp"
#include "persona/pairing.hpp"

namespace synthetic {

using persona::corpus::Corpus;
using persona::corpus::DialoguePair;
using persona::corpus::SourceTag;
using Tokens = std::vector<std::string>;

struct World {
  std::size_t topics = 10;
  std::size_t post_words = 8;      // per topic
  std::size_t response_words = 5;  // per topic
  std::size_t markers = 4;         // per persona

  static const std::vector<std::string>& persona_names() {
    static const std::vector<std::string> names{"ann", "bo", "cy", "di", "ed"};
    return names;
  }

  static std::unordered_set<std::string> stopwords() { return {"the", "a", "hello", "hi", "ok"}; }

  std::string post_word(std::size_t topic, std::size_t j) const {
    return "p" + std::to_string(topic) + "_" + std::to_string(j);
  }
  std::string response_word(std::size_t topic, std::size_t j) const {
    return "r" + std::to_string(topic) + "_" + std::to_string(j);
  }
  std::string marker(std::size_t persona, std::size_t j) const {
    return persona_names().at(persona) + "_m" + std::to_string(j);
  }

  Tokens post(std::size_t topic, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> len(3, 5), word(0, post_words - 1);
    Tokens t;
    for (std::size_t n = len(rng); n > 0; --n) t.push_back(post_word(topic, word(rng)));
    if (rng() % 3 == 0) t.insert(t.begin(), "the");
    return t;
  }

  Tokens topic_reply(std::size_t topic, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> len(2, 3), word(0, response_words - 1);
    Tokens t;
    for (std::size_t n = len(rng); n > 0; --n) t.push_back(response_word(topic, word(rng)));
    return t;
  }

  // General pairs: a topic post answered with words from the same topic.
  Corpus general(std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    Corpus c;
    c.tag = SourceTag::general();
    c.stopwords = stopwords();
    std::unordered_set<std::string> seen;
    while (c.pairs.size() < n) {
      const std::size_t topic = rng() % topics;
      Tokens p = post(topic, rng);
      if (!seen.insert(persona::corpus::join(p)).second) continue;
      c.pairs.push_back({p, topic_reply(topic, rng), c.tag});
    }
    return c;
  }

  // A persona message: own markers around a topic reply.
  Tokens message(std::size_t persona, std::size_t topic, std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> m(0, markers - 1);
    Tokens t{marker(persona, m(rng))};
    for (auto& w : topic_reply(topic, rng)) t.push_back(w);
    t.push_back(marker(persona, m(rng)));
    return t;
  }

  std::vector<persona::pairing::PersonaMessage> messages(std::size_t persona, std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed * 7919 + persona);
    std::vector<persona::pairing::PersonaMessage> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back({message(persona, rng() % topics, rng), persona_names().at(persona)});
    return out;
  }

  std::vector<Tokens> posts(std::size_t n, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::vector<Tokens> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(post(rng() % topics, rng));
    return out;
  }
};

}  // namespace synthetic
