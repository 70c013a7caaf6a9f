#pragma once

// Label lists and reference prompt strings for the Cora prompt formats.

#include <string>
#include <vector>

namespace trustglm::testing {

// Candidate order used by the comma-style (LLaGA) prompts.
inline const std::vector<std::string> kCoraComma{
    "Case Based", "Genetic Algorithms", "Neural Networks", "Probabilistic Methods",
    "Reinforcement Learning", "Rule Learning", "Theory"};

// Candidate order used by the newline-style (GraphPrompter) prompts.
inline const std::vector<std::string> kCoraNewline{
    "Rule Learning", "Neural Networks", "Case Based", "Genetic Algorithms", "Theory",
    "Reinforcement Learning", "Probabilistic Methods"};

// In-domain noise labels shown in the reference prompts.
inline const std::vector<std::string> kCitationNoise{
    "Hydrology", "cs.GL", "Materials Science", "Analytical Chemistry", "cs.PF", "cs.CC",
    "Physical Chemistry"};

inline const std::string kCommaOriginal =
    "Please predict the most appropriate category for the paper. Choose from the following "
    "categories: Case Based, Genetic Algorithms, Neural Networks, Probabilistic Methods, "
    "Reinforcement Learning, Rule Learning, Theory.";

inline const std::string kCommaInDomain =
    "Please predict the most appropriate category for the paper. Choose from the following "
    "categories: Hydrology, cs.GL, Materials Science, Analytical Chemistry, cs.PF, cs.CC, "
    "Physical Chemistry, Case Based, Genetic Algorithms, Neural Networks, Probabilistic Methods, "
    "Reinforcement Learning, Rule Learning, Theory.";

inline const std::string kNewlineOriginal =
    "Please predict the most appropriate category for the paper. Choose from the following "
    "categories:\nRule Learning\nNeural Networks\nCase Based\nGenetic Algorithms\nTheory\n"
    "Reinforcement Learning\nProbabilistic Methods\nAnswer: ";

inline const std::string kNewlineInDomain =
    "Please predict the most appropriate category for the paper. Choose from the following "
    "categories:\nRule Learning\nNeural Networks\nCase Based\nGenetic Algorithms\nTheory\n"
    "Reinforcement Learning\nProbabilistic Methods\nHydrology\ncs.GL\nMaterials Science\n"
    "Analytical Chemistry\ncs.PF\ncs.CC\nPhysical Chemistry\nAnswer: ";

// Fisher–Yates over kCoraComma with seed 42 (see the reference shuffle in
// test_promptattack.cpp).
inline const std::vector<std::string> kCoraCommaSeed42{
    "Genetic Algorithms", "Reinforcement Learning", "Probabilistic Methods", "Rule Learning",
    "Case Based", "Neural Networks", "Theory"};

inline const std::vector<std::string> kAmazonLabels{
    "Computer Components", "Car Electronics", "Electronics", "Tennis and Racquet Sports",
    "Russia", "Early Learning", "Software"};

}  // namespace trustglm::testing
