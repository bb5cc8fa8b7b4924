#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace fffvdi::cli {

struct GenDataArgs {
    std::string config;
    std::string out;
    std::optional<int> clips;
    std::optional<uint64_t> seed;
    bool eval = false;
    bool force = false;
};

struct TrainArgs {
    std::string config;
    std::string phase;
    std::string variant;
    std::string corpus;
    bool resume = false;
};

struct InferArgs {
    std::string checkpoint;
    std::string input;
    std::string mask;
    std::string out;
    std::string flows;
    int steps = 50;
    uint64_t seed = 0;
    bool no_inversion = false;
    bool no_dna = false;
    bool no_lp = false;
};

struct EvalArgs {
    std::string pred;
    std::string gt;
    std::string flows;
    std::string out;
    std::string checkpoint;
    bool allow_mixed = false;
};

struct AblationArgs {
    std::string config;
    std::string eval_corpus;
    std::string run_dir;
    std::string out;
    std::optional<int> steps;
    std::optional<uint64_t> seed;
    std::optional<int> clips;
};

void gen_data(const GenDataArgs& args);
void train(const TrainArgs& args);
void infer(const InferArgs& args);
void eval(const EvalArgs& args);
void ablation(const AblationArgs& args);
void schema();

}  // namespace fffvdi::cli
