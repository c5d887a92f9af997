#pragma once

#include <map>
#include <string>
#include <vector>

#include "fia/core/error.hpp"
#include "fia/core/sha256.hpp"
#include "fia/core/tensor.hpp"
#include "fia/data/scenes.hpp"
#include "fia/eval/detector.hpp"
#include "fia/eval/metrics.hpp"

// Vision-language describer seam. Real runs can point at an HTTP endpoint;
// tests and default runs use the deterministic mock, which answers from
// ground-truth metadata for images it has seen and from the desk detector
// for everything else.
namespace fia {
namespace eval {

enum class DescribeRole { original, inverted };

// the three prompts sent to an endpoint describer
struct PromptTemplates {
    std::string describe_original =
        "You are an image description expert. Describe the objects in this image, naming color and shape.";
    std::string describe_inverted =
        "You are an image description expert. This image was reconstructed from intercepted features; describe the "
        "objects you can make out, naming color and shape.";
    std::string compare =
        "Do these two descriptions refer to the same primary object? Answer 1 for yes, 0 for no.";
};

class Describer {
public:
    virtual ~Describer() = default;
    virtual std::string id() const = 0;
    virtual std::string describe(const TensorF& image, DescribeRole role) = 0;
    // 1 when both descriptions name the same primary object
    virtual int judge_same_object(const std::string& desc_a, const std::string& desc_b) = 0;
};

inline std::string image_digest(const TensorF& image) {
    return Sha256::hex(image.data.data(), image.data.size() * sizeof(float));
}

// leading "color shape" phrase of a description
inline std::string primary_object_phrase(const std::string& desc) {
    auto toks = word_tokens(desc);
    if (toks.size() < 2) return desc;
    return toks[0] + " " + toks[1];
}

class MockDescriber : public Describer {
public:
    std::string id() const override { return "mock"; }

    // teach the mock the ground truth for an image it may be shown later
    void register_scene(const TensorF& image, const data::SceneMeta& meta) {
        known_[image_digest(image)] = meta.description();
    }

    std::string describe(const TensorF& image, DescribeRole) override {
        auto it = known_.find(image_digest(image));
        if (it != known_.end()) return it->second;
        return describe_detections(detect_image(image));
    }

    int judge_same_object(const std::string& desc_a, const std::string& desc_b) override {
        return primary_object_phrase(desc_a) == primary_object_phrase(desc_b) ? 1 : 0;
    }

private:
    std::map<std::string, std::string> known_;
};

}  // namespace eval
}  // namespace fia
