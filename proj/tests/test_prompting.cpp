#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "testing.hpp"

#include "support.hpp"

#include "tripro/errors.hpp"
#include "tripro/experiment.hpp"
#include "tripro/prompting.hpp"

#include <algorithm>
#include <sstream>

using namespace tripro;
using namespace tripro::model;

namespace {

EncoderConfig encoder_config(const BpeTokenizer& tok) {
    auto c = support::tiny_model().encoder;
    c.vocab_size = tok.vocab_size();
    return c;
}

std::vector<std::string> names(const std::string& joined, const std::string& strip = "") {
    std::vector<std::string> out;
    std::stringstream ss(joined);
    for (std::string part; std::getline(ss, part, ',');) {
        while (!part.empty() && part.front() == ' ') part.erase(part.begin());
        if (!strip.empty() && part.rfind(strip, 0) == 0) part = part.substr(strip.size());
        out.push_back(part);
    }
    std::sort(out.begin(), out.end());
    return out;
}

bool same(const torch::Tensor& a, const torch::Tensor& b) { return torch::equal(a, b); }

struct Dual {
    VisualEncoder rgb{nullptr}, event{nullptr};
    torch::Tensor rgb_frames, event_frames;
};

Dual dual(int depth) {
    auto c = support::tiny_model().encoder;
    c.depth = depth;
    c.vocab_size = 10;
    Dual d;
    d.rgb = VisualEncoder(c);
    d.event = VisualEncoder(c);
    d.rgb_frames = torch::rand({2, 3, c.image_height, c.image_width});
    d.event_frames = torch::rand({2, 3, c.image_height, c.image_width});
    return d;
}

} // namespace

TEST_CASE("PNAP strings") {
    const std::vector<std::string> vocab{"Male", "Female", "Long Hair", "Bald", "Short Sleeves", "Jacket"};
    AttributeReport r{{"Male", "Bald", "Jacket"}, {"Female", "Long Hair", "Short Sleeves"}};
    CHECK_NOTHROW(r.validate(vocab));
    CHECK(AttributeReport::from_flags(vocab, {1, 0, 0, 1, 0, 1}) == r);
    const auto [pos, neg] = build_pnap_strings(r);
    CHECK(pos == "Male, Bald, Jacket");
    CHECK(neg == "Not Female, Not Long Hair, Not Short Sleeves");

    const std::vector<std::string> listed_order{"Male", "Jacket", "Bald", "Female", "Short Sleeves", "Long Hair"};
    const auto listed = build_pnap_strings(AttributeReport::from_flags(listed_order, {1, 1, 1, 0, 0, 0}));
    CHECK(listed.first == "Male, Jacket, Bald");
    CHECK(listed.second == "Not Female, Not Short Sleeves, Not Long Hair");

    const auto empty = build_pnap_strings(AttributeReport::from_flags({"A", "B"}, {0, 0}));
    CHECK(empty.first == "person");
    CHECK(empty.second == "Not A, Not B");

    CHECK_THROWS_AS(AttributeReport({"Male"}, {"Male"}).validate({"Male"}), InputError);
    CHECK_THROWS_AS(AttributeReport({"Male"}, {}).validate({"Male", "Bald"}), InputError);
    CHECK_THROWS_AS(AttributeReport::from_flags(vocab, {1, 0}), InputError);
}

TEST_CASE("PNAP strings: complementary reports swap names") {
    const std::vector<std::string> vocab{"Male", "Female", "Long Hair", "Bald", "Hat", "Jacket", "Skirt"};
    for (int mask = 1; mask < (1 << vocab.size()) - 1; ++mask) {
        std::vector<int> flags, inverse;
        for (std::size_t i = 0; i < vocab.size(); ++i) {
            flags.push_back((mask >> i) & 1);
            inverse.push_back(1 - flags.back());
        }
        const auto a = build_pnap_strings(AttributeReport::from_flags(vocab, flags));
        const auto b = build_pnap_strings(AttributeReport::from_flags(vocab, inverse));
        CHECK(names(a.first) == names(b.second, "Not "));
        CHECK(names(b.first) == names(a.second, "Not "));
    }
}

TEST_CASE("ID prompts") {
    torch::manual_seed(0);
    const auto tok = experiment::default_tokenizer();
    TextEncoder text(encoder_config(*tok));
    IdPromptBank bank(std::vector<int>{3, 5, 9}, 4, text, *tok);
    const auto p3 = bank->build(3), p5 = bank->build(5);
    CHECK(p3.size(0) == bank->fixed_length() + 4);
    CHECK(bank->fixed_length() == static_cast<int>(2 + tok->encode("a photo of a").size() + tok->encode("person").size()));
    const auto prefix = 1 + static_cast<int64_t>(tok->encode("a photo of a").size());
    const auto diff = (p3 - p5).abs().sum(1);
    for (int64_t i = 0; i < p3.size(0); ++i) CHECK((diff[i].item<float>() > 0) == (i >= prefix && i < prefix + 4));
    CHECK(bank->row(9) == 2);
    CHECK_THROWS_AS(bank->build(4), LookupError);

    // a gradient step on identity 3 leaves the others alone
    const auto before5 = bank->build(5).detach().clone();
    const auto before3 = bank->build(3).detach().clone();
    torch::optim::SGD opt(std::vector<torch::Tensor>{bank->tokens}, 0.5);
    bank->build(3).sum().backward();
    opt.step();
    CHECK(same(bank->build(5).detach(), before5));
    CHECK(!same(bank->build(3).detach(), before3));

    const auto batch = bank->build_batch({9, 3});
    CHECK(same(batch[1].detach(), bank->build(3).detach()));
}

TEST_CASE("PNAP encoding") {
    torch::manual_seed(1);
    const auto tok = experiment::default_tokenizer();
    const auto c = encoder_config(*tok);
    TextEncoder text(c);
    const std::vector<std::string> vocab{"Male", "Bald", "Hat"};
    const auto report = AttributeReport::from_flags(vocab, {1, 0, 1});

    PnapBundle full(PnapMode::Full, 2, c.width, text, *tok);
    const auto a = full->encode(report);
    CHECK((a.sizes() == torch::IntArrayRef{2, c.width}));
    CHECK(same(a, full->encode(report)));
    const auto batch = full->encode_batch({report, AttributeReport::from_flags(vocab, {0, 1, 0}), report});
    CHECK((batch.sizes() == torch::IntArrayRef{3, 2, c.width}));
    CHECK(torch::allclose(batch[0], a, 1e-6, 1e-6));
    CHECK(same(batch[0], batch[2]));
    CHECK(!same(batch[0], batch[1]));

    // reordering the vocabulary reorders the strings and therefore the tokens
    const auto swapped = AttributeReport::from_flags({"Hat", "Bald", "Male"}, {1, 0, 1});
    CHECK(!same(a[0], full->encode(swapped)[0]));

    {
        torch::NoGradGuard g;
        full->fc->weight.zero_();
        full->fc->bias.zero_();
    }
    CHECK(full->encode(report).abs().sum().item<float>() == 0.0f);

    PnapBundle positive(PnapMode::PositiveOnly, 2, c.width, text, *tok);
    CHECK(positive->slot_count() == 1);
    CHECK(positive->encode(report).size(0) == 1);
    PnapBundle bare(PnapMode::NoContext, 2, c.width, text, *tok);
    CHECK(bare->ctx_pos.size(0) == 0);
    CHECK(bare->encode(report).size(0) == 2);

    std::vector<std::string> long_vocab;
    for (int i = 0; i < 40; ++i) long_vocab.push_back("Attribute" + std::to_string(i));
    const auto overlong = AttributeReport::from_flags(long_vocab, std::vector<int>(40, 1));
    CHECK_THROWS_AS(full->encode(overlong), InputError);
}

TEST_CASE("projectors") {
    torch::manual_seed(2);
    const auto x = torch::randn({3, 5, 24});
    ProjectorModule none(Projector::None, 24);
    CHECK(same(none->forward(x), x));
    CHECK(none->parameters().empty());
    ProjectorModule fc(Projector::Fc, 24);
    CHECK(fc->forward(x).sizes() == x.sizes());
    ProjectorModule adapter(Projector::Adapter, 24);
    CHECK(adapter->down->weight.size(0) == 6);
    {
        torch::NoGradGuard g;
        adapter->up->weight.zero_();
        adapter->up->bias.zero_();
    }
    CHECK(same(adapter->forward(x), x)); // residual only
    CHECK(projector_from_string("adapter") == Projector::Adapter);
    CHECK(to_string(Direction::Bidirectional) == "bidirectional");
    CHECK(pnap_mode_from_string("no_context") == PnapMode::NoContext);
    CHECK_THROWS_AS(projector_from_string("mlp"), ConfigError);
    CHECK_THROWS_AS(direction_from_string("sideways"), ConfigError);
    CHECK_THROWS_AS(pnap_mode_from_string("negative_only"), ConfigError);
}

TEST_CASE("injected sequence layout") {
    torch::manual_seed(3);
    EncoderConfig desk;
    desk.vocab_size = 10;
    desk.depth = 2;
    VisualEncoder rgb(desk), event(desk);
    CmpBank cmp(20, desk.width, 2, Projector::Fc, Direction::RgbToEvent);
    const auto frames = torch::rand({1, 3, 128, 64});
    const auto r0 = rgb->patchify(frames), e0 = event->patchify(frames);
    const auto s = inject_prompts(r0, e0, torch::randn({1, 2, desk.width}), 0, cmp.get(), desk.depth);
    CHECK(s.rgb.length() == 1 + 32 + 2 + 20);
    CHECK(s.event.length() == 55);
    // CLS and patch slots untouched
    CHECK(same(s.rgb.tokens.narrow(1, 0, 33), r0.tokens));
    CHECK(same(s.event.tokens.narrow(1, 0, 33), e0.tokens));
    CHECK(same(s.rgb.slice(SlotKind::Cmp)[0], cmp->tokens));
    CHECK(torch::allclose(s.event.slice(SlotKind::Cmp)[0], cmp->rgb_to_event->forward(cmp->tokens)));

    CmpBank too_deep(4, desk.width, 3, Projector::Fc, Direction::RgbToEvent);
    CHECK_THROWS_AS(inject_prompts(r0, e0, {}, 0, too_deep.get(), desk.depth), ConfigError);
    CHECK_THROWS_AS(inject_prompts(r0, e0, torch::randn({1, 2, desk.width}), 2, nullptr, desk.depth), ConfigError);
    CHECK_THROWS_AS(CmpBank(0, 8, 1, Projector::Fc, Direction::RgbToEvent), ConfigError);
}

TEST_CASE("CMP propagation follows the direction") {
    for (auto dir : {Direction::RgbToEvent, Direction::EventToRgb, Direction::Bidirectional})
        for (auto proj : {Projector::Fc, Projector::Adapter, Projector::None})
            for (int cmp_depth : {0, 1, 2, 3}) {
                torch::manual_seed(4);
                auto d = dual(3);
                CmpBank cmp(4, 24, cmp_depth, proj, dir);
                auto s = inject_prompts(d.rgb->patchify(d.rgb_frames), d.event->patchify(d.event_frames), {}, 0,
                                        cmp.get(), 3);
                DualTrace trace;
                encode_dual(*d.rgb, *d.event, s, &trace);
                REQUIRE(trace.rgb_inputs.size() == 3);
                const bool to_event = dir != Direction::EventToRgb;
                const bool to_rgb = dir != Direction::RgbToEvent;
                for (int k = 1; k < 3; ++k) {
                    auto r_out = trace.rgb_inputs[k - 1];
                    auto e_out = trace.event_inputs[k - 1];
                    d.rgb->run_block(k - 1, r_out);
                    d.event->run_block(k - 1, e_out);
                    const auto r_in = trace.rgb_inputs[k].slice(SlotKind::Cmp);
                    const auto e_in = trace.event_inputs[k].slice(SlotKind::Cmp);
                    const bool propagated = k < cmp_depth;
                    const auto e_expect = propagated && to_event ? cmp->rgb_to_event->forward(r_out.slice(SlotKind::Cmp))
                                                                 : e_out.slice(SlotKind::Cmp);
                    const auto r_expect = propagated && to_rgb ? cmp->event_to_rgb->forward(e_out.slice(SlotKind::Cmp))
                                                               : r_out.slice(SlotKind::Cmp);
                    CHECK(torch::allclose(e_in, e_expect, 1e-6, 1e-7));
                    CHECK(torch::allclose(r_in, r_expect, 1e-6, 1e-7));
                    if (propagated && proj == Projector::None) {
                        if (to_event) CHECK(same(e_in, r_out.slice(SlotKind::Cmp)));
                        if (to_rgb && !to_event) CHECK(same(r_in, e_out.slice(SlotKind::Cmp)));
                    }
                    // CLS and patch slots are never overwritten by hooks
                    CHECK(same(trace.rgb_inputs[k].tokens.narrow(1, 0, 9), r_out.tokens.narrow(1, 0, 9)));
                    CHECK(same(trace.event_inputs[k].tokens.narrow(1, 0, 9), e_out.tokens.narrow(1, 0, 9)));
                }
            }
}

TEST_CASE("PNAP injected at a later layer") {
    torch::manual_seed(5);
    auto d = dual(3);
    const auto pnap = torch::randn({2, 2, 24});
    auto s = inject_prompts(d.rgb->patchify(d.rgb_frames), d.event->patchify(d.event_frames), pnap, 2, nullptr, 3);
    CHECK(s.rgb.length() == 9);
    DualTrace trace;
    encode_dual(*d.rgb, *d.event, s, &trace);
    CHECK(trace.rgb_inputs[1].length() == 9);
    CHECK(trace.rgb_inputs[2].length() == 11);
    CHECK(same(trace.event_inputs[2].slice(SlotKind::Pnap), pnap));
}

TEST_CASE("attribute predictors") {
    data::DatasetManifest m;
    m.attribute_vocabulary = {"Male", "Hat"};
    m.tracklets.push_back({0, 4, 0, 0, "0004/000", 1, {0}, false});
    m.attributes[4] = {0, 1};
    GroundTruthAttributes gt(m);
    CHECK((gt.predict(0, {}) == AttributeReport{{"Hat"}, {"Male"}}));
    ConstantAttributes constant({{}, {"Male", "Hat"}});
    CHECK(constant.predict(0, {}).absent.size() == 2);
    CHECK_THROWS_AS(gt.predict(3, {}), LookupError);
}
