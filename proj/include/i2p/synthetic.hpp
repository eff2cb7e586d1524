#pragma once

#include "i2p/corpus.hpp"
#include "i2p/features.hpp"

#include <array>
#include <filesystem>
#include <vector>

namespace i2p {

struct SyntheticConfig {
    int n_images = 50;
    int corpus_size = 100;  // poem-only (unim) poems besides the paired ones
    int dim = 16;           // feature length per aspect
    int m = 32;             // suggested sentence-encoder width, recorded in the manifest
    std::uint64_t seed = 1;
    double noise = 0.3;     // stddev of the per-image feature noise
    int paragraphs = -1;    // -1: max(10, corpus_size / 2)
};

/// Planted-correspondence data. Image i and poem "mm-i" share a latent
/// (object, scene, sentiment) word triple: the features are noisy aspect
/// prototypes of the triple and the poem mentions all three words. Latents are
/// distinct and, while the latent space allows, differ in at least two aspects.
struct SyntheticData {
    std::vector<ImageFeatures> features;
    std::vector<Poem> poems;       // multim poems first, then unim poems
    std::vector<PairedExample> pairs;
    std::vector<Poem> paragraphs;
    LexiconSet lexicons;
    std::vector<std::array<int, 3>> latents;  // per image, indices into the lexicons
};

SyntheticData make_synthetic(const SyntheticConfig& config);

/// A poem for a latent triple: a fixed line template with random filler words.
Poem synthetic_poem(const std::array<int, 3>& latent, const LexiconSet& lexicons, Rng& rng, std::string id,
                    PoemSource source);

/// Writes features.jsonl, poems.jsonl, pairs.jsonl, paragraphs.jsonl,
/// lexicons/{object,scene,sentiment}.txt and synthetic.json; returns the paths.
std::vector<std::filesystem::path> write_synthetic(const SyntheticData& data, const SyntheticConfig& config,
                                                   const std::filesystem::path& dir);

} // namespace i2p
