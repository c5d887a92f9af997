#include <atomic>
#include <catch2/catch_amalgamated.hpp>
#include <thread>

#include "fia/eval/describer.hpp"
#include "fia/eval/endpoint.hpp"

using namespace fia;

namespace {

TensorF circle_image(int color) {
    TensorF img = TensorF::full({3, 64, 64}, -1.0f);
    data::SceneObject o;
    o.shape = 0;
    o.color = color;
    o.cx = 30.0f;
    o.cy = 32.0f;
    o.radius = 10.0f;
    auto rgb = data::color_rgb(color);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            if (data::detail::object_coverage(o, static_cast<float>(x), static_cast<float>(y)) > 0.5f)
                for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[static_cast<size_t>(c)];
    return img;
}

// serves canned answers and counts calls; status_first lets a test inject one
// transient failure
struct FakeService {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> describe_calls{0}, judge_calls{0};
    std::atomic<int> fail_first{0};  // this many leading /describe calls get a 500
    nlohmann::json describe_reply = {{"text", "red circle"}};
    nlohmann::json judge_reply = {{"judgment", 1}};
    nlohmann::json last_describe, last_judge;

    FakeService() {
        server.Post("/describe", [this](const httplib::Request& req, httplib::Response& res) {
            last_describe = nlohmann::json::parse(req.body);
            if (describe_calls++ < fail_first) {
                res.status = 500;
                return;
            }
            res.set_content(describe_reply.dump(), "application/json");
        });
        server.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
            last_judge = nlohmann::json::parse(req.body);
            ++judge_calls;
            res.set_content(judge_reply.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~FakeService() {
        server.stop();
        thread.join();
    }

    eval::EndpointConfig config(int retries = 0) const {
        eval::EndpointConfig ec;
        ec.host = "127.0.0.1";
        ec.port = port;
        ec.retries = retries;
        ec.backoff_ms = 1;
        return ec;
    }
};

}  // namespace

TEST_CASE("image digest separates images") {
    Rng rng(100);
    TensorF a = TensorF::randn({3, 8, 8}, rng);
    TensorF b = a;
    REQUIRE(eval::image_digest(a) == eval::image_digest(b));
    REQUIRE(eval::image_digest(a).size() == 64);
    b.data[17] = std::nextafterf(b.data[17], 2.0f);
    REQUIRE(eval::image_digest(a) != eval::image_digest(b));
}

TEST_CASE("primary object phrase extraction") {
    REQUIRE(eval::primary_object_phrase("red circle and blue square") == "red circle");
    REQUIRE(eval::primary_object_phrase("Green Cross, yellow dot") == "green cross");
    // too short to carve a color-shape pair out of: returned untouched
    REQUIRE(eval::primary_object_phrase("mush") == "mush");
    REQUIRE(eval::primary_object_phrase("") == "");
}

TEST_CASE("mock describer answers from registered ground truth") {
    eval::MockDescriber mock;
    REQUIRE(mock.id() == "mock");

    data::Scene s = data::make_scene(301);
    mock.register_scene(s.image, s.meta);
    REQUIRE(mock.describe(s.image, eval::DescribeRole::original) == s.meta.description());
    // role does not change the registered answer, and repeats are stable
    REQUIRE(mock.describe(s.image, eval::DescribeRole::inverted) == s.meta.description());
    REQUIRE(mock.describe(s.image, eval::DescribeRole::original) ==
            mock.describe(s.image, eval::DescribeRole::original));
}

TEST_CASE("mock describer falls back to the detector") {
    eval::MockDescriber mock;
    TensorF img = circle_image(2);
    REQUIRE(mock.describe(img, eval::DescribeRole::inverted) == "blue circle");
    REQUIRE(mock.describe(TensorF::full({3, 64, 64}, -1.0f), eval::DescribeRole::inverted) == "nothing recognizable");
}

TEST_CASE("mock judge compares primary phrases") {
    eval::MockDescriber mock;
    REQUIRE(mock.judge_same_object("red circle and blue square", "red circle near the edge") == 1);
    REQUIRE(mock.judge_same_object("red circle", "red square") == 0);
    REQUIRE(mock.judge_same_object("red circle", "blue circle") == 0);
    REQUIRE(mock.judge_same_object("Red Circle!", "red circle") == 1);
}

TEST_CASE("endpoint describer round trips through a local service") {
    FakeService svc;
    svc.describe_reply = {{"text", "magenta triangle on gray"}};
    svc.judge_reply = {{"judgment", 0}};
    eval::EndpointDescriber d(svc.config());
    REQUIRE(d.id() == "endpoint:127.0.0.1:" + std::to_string(svc.port));

    TensorF img = circle_image(0);
    REQUIRE(d.describe(img, eval::DescribeRole::original) == "magenta triangle on gray");
    REQUIRE(svc.describe_calls == 1);
    REQUIRE(svc.last_describe.at("prompt").get<std::string>().find("reconstructed") == std::string::npos);
    REQUIRE(svc.last_describe.contains("image_png_b64"));

    d.describe(img, eval::DescribeRole::inverted);
    REQUIRE(svc.last_describe.at("prompt").get<std::string>().find("reconstructed") != std::string::npos);

    REQUIRE(d.judge_same_object("a", "b") == 0);
    REQUIRE(svc.judge_calls == 1);
    REQUIRE(svc.last_judge.at("a") == "a");
    REQUIRE(svc.last_judge.at("b") == "b");

    REQUIRE_THROWS_AS(d.describe(TensorF::zeros({1, 8, 8}), eval::DescribeRole::original), InputError);
}

TEST_CASE("endpoint describer retries transient failures") {
    FakeService svc;
    svc.fail_first = 1;
    eval::EndpointDescriber d(svc.config(/*retries=*/2));
    REQUIRE(d.describe(circle_image(1), eval::DescribeRole::original) == "red circle");
    REQUIRE(svc.describe_calls == 2);  // one 500, one success
}

TEST_CASE("endpoint describer reports exhausted retries") {
    FakeService svc;
    svc.fail_first = 1000;
    eval::EndpointDescriber d(svc.config(/*retries=*/1));
    REQUIRE_THROWS_AS(d.describe(circle_image(1), eval::DescribeRole::original), DescriberError);
    REQUIRE(svc.describe_calls == 2);  // initial try + one retry

    // an unreachable port fails the same way without hanging
    eval::EndpointConfig dead = svc.config(/*retries=*/1);
    dead.port = 1;  // reserved, nothing listens here
    dead.timeout_s = 2;
    eval::EndpointDescriber d2(dead);
    REQUIRE_THROWS_AS(d2.judge_same_object("a", "b"), DescriberError);
}

TEST_CASE("endpoint describer refuses malformed replies") {
    FakeService svc;
    svc.describe_reply = {{"text", ""}};
    eval::EndpointDescriber d(svc.config());
    REQUIRE_THROWS_AS(d.describe(circle_image(3), eval::DescribeRole::original), DescriberError);

    svc.judge_reply = {{"verdict", 1}};  // wrong key
    REQUIRE_THROWS_AS(d.judge_same_object("a", "b"), DescriberError);
}
