#pragma once

#include <chrono>
#include <condition_variable>
#include <mutex>
#include <string>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "fia/core/rng.hpp"
#include "fia/eval/describer.hpp"
#include "fia/io/png.hpp"

// HTTP describer client. Expects a service with two JSON routes:
//   POST /describe {prompt, image_png_b64} -> {text}
//   POST /judge    {prompt, a, b}          -> {judgment}
// Requests retry with jittered exponential backoff, and a small admission
// gate caps how many are in flight at once.
namespace fia {
namespace eval {

struct EndpointConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    int retries = 3;         // attempts beyond the first
    int backoff_ms = 50;     // doubled per retry, +/- 50% jitter
    int max_in_flight = 4;
    int timeout_s = 10;
    PromptTemplates prompts;
};

namespace detail {

inline std::string base64(const std::vector<uint8_t>& bytes) {
    static const char* alphabet = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (size_t i = 0; i < bytes.size(); i += 3) {
        uint32_t v = static_cast<uint32_t>(bytes[i]) << 16;
        if (i + 1 < bytes.size()) v |= static_cast<uint32_t>(bytes[i + 1]) << 8;
        if (i + 2 < bytes.size()) v |= bytes[i + 2];
        out.push_back(alphabet[(v >> 18) & 63]);
        out.push_back(alphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < bytes.size() ? alphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < bytes.size() ? alphabet[v & 63] : '=');
    }
    return out;
}

}  // namespace detail

class EndpointDescriber : public Describer {
public:
    explicit EndpointDescriber(EndpointConfig cfg, uint64_t jitter_seed = 0)
        : cfg_(std::move(cfg)), rng_(Rng(jitter_seed).fork("describer.jitter")), in_flight_(0) {}

    std::string id() const override { return "endpoint:" + cfg_.host + ":" + std::to_string(cfg_.port); }

    std::string describe(const TensorF& image, DescribeRole role) override {
        if (image.ndim() != 3 || image.size(0) != 3) throw InputError("describe: expected a (3,H,W) image");
        int h = image.size(1), w = image.size(2);
        std::vector<uint8_t> rgb(static_cast<size_t>(h) * w * 3);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                for (int c = 0; c < 3; ++c)
                    rgb[(static_cast<size_t>(y) * w + x) * 3 + c] = io::quantize_unit(image.at(c, y, x));
        nlohmann::json req = {
            {"prompt", role == DescribeRole::original ? cfg_.prompts.describe_original : cfg_.prompts.describe_inverted},
            {"image_png_b64", detail::base64(io::encode_png_rgb8(rgb, w, h))}};
        nlohmann::json resp = post_with_retries_("/describe", req);
        std::string text = resp.value("text", "");
        if (text.empty()) throw DescriberError("describer returned an empty description");
        return text;
    }

    int judge_same_object(const std::string& desc_a, const std::string& desc_b) override {
        nlohmann::json req = {{"prompt", cfg_.prompts.compare}, {"a", desc_a}, {"b", desc_b}};
        nlohmann::json resp = post_with_retries_("/judge", req);
        if (!resp.contains("judgment")) throw DescriberError("describer judge response lacks a judgment");
        return resp["judgment"].get<int>() ? 1 : 0;
    }

private:
    nlohmann::json post_with_retries_(const std::string& route, const nlohmann::json& body) {
        admit_();
        struct Release {
            EndpointDescriber* d;
            ~Release() { d->release_(); }
        } release{this};

        std::string payload = body.dump();
        std::string last_error = "no attempt made";
        for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
            if (attempt > 0) {
                double jitter;
                {
                    std::lock_guard<std::mutex> lock(mu_);
                    jitter = rng_.uniform(0.5, 1.5);
                }
                int wait = static_cast<int>(cfg_.backoff_ms * (1 << (attempt - 1)) * jitter);
                std::this_thread::sleep_for(std::chrono::milliseconds(wait));
            }
            httplib::Client client(cfg_.host, cfg_.port);
            client.set_connection_timeout(cfg_.timeout_s);
            client.set_read_timeout(cfg_.timeout_s);
            auto res = client.Post(route, payload, "application/json");
            if (!res) {
                last_error = "connection failed (" + httplib::to_string(res.error()) + ")";
                continue;
            }
            if (res->status != 200) {
                last_error = "http status " + std::to_string(res->status);
                continue;
            }
            try {
                return nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception& e) {
                last_error = std::string("bad JSON in response: ") + e.what();
            }
        }
        throw DescriberError("describer " + id() + route + " failed after " + std::to_string(cfg_.retries + 1) +
                             " attempts: " + last_error);
    }

    void admit_() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [this] { return in_flight_ < cfg_.max_in_flight; });
        ++in_flight_;
    }

    void release_() {
        {
            std::lock_guard<std::mutex> lock(mu_);
            --in_flight_;
        }
        cv_.notify_one();
    }

    EndpointConfig cfg_;
    Rng rng_;
    std::mutex mu_;
    std::condition_variable cv_;
    int in_flight_;
};

}  // namespace eval
}  // namespace fia
