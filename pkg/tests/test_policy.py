import math

import numpy as np
import pytest
import torch

from conftest import tiny_config
from lastlab.policy.bundle import PolicyBundle
from lastlab.policy.decoding import (
    answer_batch,
    constant_velocity,
    content_lookup,
    generate,
    plan,
    token_logprobs,
)
from lastlab.policy.layout import Segment, build_sequence, collate, scene_inputs
from lastlab.policy.masking import MaskPhase, allow_from_segments, build_mask, mask_for
from lastlab.policy.model import PinnedStates, restricted_log_probs
from lastlab.tokenizer import vocab as V
from lastlab.tokenizer.codec import serialize_trajectory
from lastlab.utils.reliability import ConfigurationError
from lastlab.world.samples import generate_samples

IMG, TXT, WM, GEO, ACT = (int(s) for s in (Segment.IMG, Segment.TXT, Segment.WM, Segment.GEO, Segment.ACT))


@pytest.fixture(scope="module")
def samples():
    return generate_samples([7, 8], "hard", tiny_config())


def teacher_forced(bundle, config, samples):
    inputs = [scene_inputs(s, config) for s in samples]
    answers = [serialize_trajectory(s.scene.gt_trajectory) for s in samples]
    return answer_batch(inputs, answers, config, bundle.vocab)


class TestLayout:
    def test_segment_order(self, config, samples):
        vocab = PolicyBundle(config).vocab
        seq = build_sequence(scene_inputs(samples[0], config), config, vocab)
        layout = seq.layout
        assert layout.n_img == (64 // 16) ** 2
        assert layout.wm_slots == 3 * config.latent.n_wm
        assert layout.geo_slots == config.latent.n_3d
        # monotone: IMG, TXT, WM, GEO, ACT
        assert list(np.unique(seq.segments)) == [IMG, TXT, WM, GEO, ACT]
        assert np.all(np.diff(seq.segments) >= 0)
        tokens = vocab.decode(seq.token_ids)
        assert tokens[layout.wm_start] == V.WM_START
        assert tokens[layout.geo_start] == V.GEO_START
        assert tokens[-1] == V.ANSWER_START

    def test_no_latent_layout(self, samples):
        config = tiny_config("run.reasoning=none", "run.latent_supervision=off")
        vocab = PolicyBundle(config).vocab
        seq = build_sequence(scene_inputs(samples[0], config), config, vocab)
        assert WM not in seq.segments and GEO not in seq.segments
        assert (seq.slot_index == -1).all()

    def test_slot_indices_are_dense(self, config, samples):
        vocab = PolicyBundle(config).vocab
        seq = build_sequence(scene_inputs(samples[0], config), config, vocab)
        slots = seq.slot_index[seq.slot_index >= 0]
        assert list(slots) == list(range(3 * config.latent.n_wm + config.latent.n_3d))

    def test_too_long_for_max_len(self, samples):
        config = tiny_config("policy.max_len=200", "policy.max_answer_tokens=48")
        vocab = PolicyBundle(config).vocab
        with pytest.raises(ConfigurationError):
            build_sequence(scene_inputs(samples[0], config), config, vocab, answer=["0"] * 150)


class TestMasking:
    def segments(self):
        return torch.tensor([IMG, IMG, TXT, WM, WM, GEO, GEO, ACT, ACT])

    def test_latent_segments_are_mutually_blind(self):
        allow = allow_from_segments(self.segments(), MaskPhase.PHASE1)
        assert not allow[5, 3] and not allow[6, 4]
        assert allow[4, 3] and allow[6, 5]
        assert allow[5, 0] and allow[3, 2]

    def test_bottleneck_only_in_phase_one(self):
        phase1 = allow_from_segments(self.segments(), MaskPhase.PHASE1)
        phase2 = allow_from_segments(self.segments(), MaskPhase.PHASE2_AND_RL)
        assert not phase1[7, 0] and not phase1[8, 1]
        assert phase2[7, 0] and phase2[8, 1]
        # the answer still reads the latent chain
        assert phase1[7, 3] and phase1[7, 5]

    def test_causal_and_diagonal(self):
        allow = allow_from_segments(self.segments(), MaskPhase.PHASE1)
        assert not torch.triu(allow, diagonal=1).any()
        assert torch.diagonal(allow).all()

    def test_standard_mode_is_plain_causal(self, config):
        standard = tiny_config("run.mask=standard")
        allow = mask_for(standard, MaskPhase.PHASE1, self.segments())
        assert torch.equal(allow, torch.tril(torch.ones(9, 9, dtype=torch.bool)))

    def test_phase_two_mutual_switch(self):
        config = tiny_config("policy.phase2_mutual_mask=false")
        allow = mask_for(config, MaskPhase.PHASE2_AND_RL, self.segments())
        assert allow[5, 3]
        assert not mask_for(config, MaskPhase.PHASE1, self.segments())[5, 3]

    def test_build_mask_from_layout(self, config, samples):
        bundle = PolicyBundle(config)
        layout = build_sequence(scene_inputs(samples[0], config), config, bundle.vocab).layout
        spec = build_mask(layout, "phase1")
        assert spec.allow.shape == (layout.length, layout.length)
        assert spec.forbidden()[layout.act_start, 0]

    @pytest.mark.parametrize("phase", [MaskPhase.PHASE1, MaskPhase.PHASE2_AND_RL])
    def test_forbidden_pairs_get_zero_attention(self, config, samples, phase):
        bundle = PolicyBundle(config)
        batch, _ = teacher_forced(bundle, config, samples)
        allow = mask_for(config, phase, batch.segments)
        out = bundle.model(batch, allow, return_attention=True)
        assert len(out.attentions) == config.policy.n_layers
        forbidden = (~allow).unsqueeze(1)
        for weights in out.attentions:
            assert torch.all(weights.masked_select(forbidden) == 0.0)
            torch.testing.assert_close(weights.sum(-1), torch.ones_like(weights.sum(-1)))


class TestModel:
    def test_zero_parameters_give_uniform_logits(self, config, samples):
        bundle = PolicyBundle(config)
        for p in bundle.model.parameters():
            p.data.zero_()
        batch, _ = teacher_forced(bundle, config, samples)
        out = bundle.model(batch, mask_for(config, MaskPhase.PHASE1, batch.segments))
        assert torch.all(out.logits == 0.0)
        content, _ = content_lookup(bundle.vocab)
        log_p = restricted_log_probs(out.logits, content)
        torch.testing.assert_close(log_p, torch.full_like(log_p, -math.log(len(V.CONTENT_TOKENS))))

    def test_rows_are_independent(self, config, samples):
        bundle = PolicyBundle(config)
        bundle.model.eval()
        batch, _ = teacher_forced(bundle, config, samples)
        both = bundle.model(batch, mask_for(config, "phase2_and_rl", batch.segments)).logits
        for i, sample in enumerate(samples):
            single, _ = teacher_forced(bundle, config, [sample])
            alone = bundle.model(single, mask_for(config, "phase2_and_rl", single.segments)).logits
            n = int(batch.lengths[i])
            torch.testing.assert_close(both[i, :n], alone[0, :n], atol=1e-5, rtol=1e-5)

    def test_causality(self, config, samples):
        bundle = PolicyBundle(config)
        batch, _ = teacher_forced(bundle, config, samples[:1])
        allow = mask_for(config, "phase2_and_rl", batch.segments)
        before = bundle.model(batch, allow).logits
        last = int(batch.lengths[0]) - 2
        batch.token_ids[0, last] = bundle.vocab.id(";")
        after = bundle.model(batch, allow).logits
        torch.testing.assert_close(before[0, :last], after[0, :last])
        assert not torch.equal(before[0, last], after[0, last])

    def test_phase_one_answer_sees_the_image_only_through_the_context(self, config, samples):
        """With every non-answer state pinned, answer logits ignore the raster."""
        bundle = PolicyBundle(config)
        bundle.model.eval()
        batch, _ = teacher_forced(bundle, config, samples[:1])
        allow = mask_for(config, MaskPhase.PHASE1, batch.segments)
        reference = bundle.model(batch, allow, record_states=True)

        batch.raster = torch.rand_like(batch.raster)
        pin = PinnedStates(states=reference.layer_states, positions=batch.segments != ACT)
        pinned = bundle.model(batch, allow, pin=pin)
        act = batch.segments[0] == ACT
        torch.testing.assert_close(pinned.logits[0, act], reference.logits[0, act], atol=1e-6, rtol=0)

        open_allow = mask_for(config, MaskPhase.PHASE2_AND_RL, batch.segments)
        seen = bundle.model(batch, open_allow).logits
        unseen = bundle.model(
            teacher_forced(bundle, config, samples[:1])[0],
            open_allow,
        ).logits
        assert not torch.equal(seen[0, act], unseen[0, act])

    def test_latent_chain_shapes(self, config, samples):
        bundle = PolicyBundle(config)
        batch, _ = teacher_forced(bundle, config, samples)
        out = bundle.model(batch, mask_for(config, MaskPhase.PHASE1, batch.segments))
        d = config.policy.d_model
        assert out.latent.h_dyn.shape == (2, 3, config.latent.n_wm, d)
        assert out.latent.h_geo.shape == (2, config.latent.n_3d, d)
        assert out.e_img.shape == (2, 16, d)

    def test_patchify_rejects_foreign_raster(self, config):
        bundle = PolicyBundle(config)
        with pytest.raises(ConfigurationError):
            bundle.model.patchify(torch.zeros(1, 3, 60, 60))
        with pytest.raises(ConfigurationError):
            bundle.model.patchify(torch.zeros(1, 2, 64, 64))

    def test_mask_length_mismatch(self, config, samples):
        bundle = PolicyBundle(config)
        batch, _ = teacher_forced(bundle, config, samples[:1])
        with pytest.raises(ConfigurationError):
            bundle.model(batch, torch.ones(3, 3, dtype=torch.bool))

    def test_latent_feedback_runs(self, samples):
        config = tiny_config("policy.latent_feedback=true")
        bundle = PolicyBundle(config)
        batch, _ = teacher_forced(bundle, config, samples[:1])
        out = bundle.model(batch, mask_for(config, MaskPhase.PHASE1, batch.segments))
        assert torch.isfinite(out.logits).all()

    @pytest.mark.parametrize("overrides, phase, isolated", [
        ((), MaskPhase.PHASE1, True),
        ((), MaskPhase.PHASE2_AND_RL, True),
        (("policy.phase2_mutual_mask=false",), MaskPhase.PHASE2_AND_RL, False),
    ])
    def test_latent_feedback_keeps_geometry_blind_to_dynamics(self, samples, overrides, phase, isolated):
        config = tiny_config("policy.latent_feedback=true", *overrides)
        bundle = PolicyBundle(config)
        bundle.model.eval()
        batch, _ = teacher_forced(bundle, config, samples[:1])
        allow = mask_for(config, phase, batch.segments)
        with torch.no_grad():
            before = bundle.model(batch, allow).latent
            bundle.model.tok_embed.weight[bundle.vocab.id(V.WM_START)] += 1.0
            after = bundle.model(batch, allow).latent
        assert not torch.equal(before.h_dyn, after.h_dyn)
        assert torch.equal(before.h_geo, after.h_geo) == isolated

    def test_initialisation_is_seeded(self, config):
        a, b = PolicyBundle(config), PolicyBundle(config)
        for (name, p), q in zip(a.model.state_dict().items(), b.model.state_dict().values()):
            assert torch.equal(p, q), name
        other = PolicyBundle(tiny_config("run.seed=1"))
        assert not torch.equal(a.model.tok_embed.weight, other.model.tok_embed.weight)


class TestDecoding:
    def test_rollouts_are_closed_answers(self, config, samples):
        bundle = PolicyBundle(config)
        inputs = scene_inputs(samples[0], config)
        result = generate(bundle.model, bundle.vocab, inputs, config, n=3, temperature=2.0,
                          generator=torch.Generator().manual_seed(1))
        assert len(result.rollouts) == 3
        for r in result.rollouts:
            assert r.answer[0] == V.ANSWER_START and r.answer[-1] == V.ANSWER_END
            assert 1 <= r.n_sampled <= config.policy.max_answer_tokens
            assert r.forced_close == (not r.closed)
            assert np.all(r.logprobs <= 0.0)
            assert np.all(r.entropies >= 0.0)
            assert all(t in V.CONTENT_TOKENS for t in r.answer[1:])

    def test_budget_exhaustion_forces_the_close_tag(self, config, samples):
        bundle = PolicyBundle(config)
        for p in bundle.model.parameters():
            p.data.zero_()
        # uniform logits: greedy picks the first content token forever
        result = generate(bundle.model, bundle.vocab, scene_inputs(samples[0], config), config, greedy=True)
        rollout = result.rollouts[0]
        assert rollout.forced_close and not rollout.closed
        assert rollout.n_sampled == config.policy.max_answer_tokens
        assert rollout.answer[1:-1] == [V.CONTENT_TOKENS[0]] * config.policy.max_answer_tokens

    def test_without_grammar_forcing(self, config, samples):
        bundle = PolicyBundle(config)
        for p in bundle.model.parameters():
            p.data.zero_()
        result = generate(bundle.model, bundle.vocab, scene_inputs(samples[0], config), config,
                          greedy=True, force_grammar=False)
        assert result.rollouts[0].answer[-1] != V.ANSWER_END

    def test_unparseable_plan_falls_back_to_constant_velocity(self, config, samples):
        bundle = PolicyBundle(config)
        for p in bundle.model.parameters():
            p.data.zero_()
        inputs = scene_inputs(samples[0], config)
        outcome = plan(bundle.model, bundle.vocab, inputs, config)
        assert outcome.fallback and outcome.error_code
        assert outcome.trajectory.equals(constant_velocity(inputs.ego_speed))

    def test_constant_velocity(self):
        traj = constant_velocity(4.0)
        np.testing.assert_allclose(traj.waypoints[:, 0], 0.0)
        np.testing.assert_allclose(traj.waypoints[:, 1], [2.0, 4.0, 6.0, 8.0, 10.0, 12.0])

    def test_greedy_is_deterministic(self, config, samples):
        bundle = PolicyBundle(config)
        inputs = scene_inputs(samples[1], config)
        a = generate(bundle.model, bundle.vocab, inputs, config, greedy=True).rollouts[0]
        b = generate(bundle.model, bundle.vocab, inputs, config, greedy=True).rollouts[0]
        assert a.tokens == b.tokens

    def test_seeded_sampling_is_reproducible(self, config, samples):
        bundle = PolicyBundle(config)
        inputs = scene_inputs(samples[0], config)
        runs = [
            generate(bundle.model, bundle.vocab, inputs, config, n=2, temperature=2.0,
                     generator=torch.Generator().manual_seed(5)).rollouts
            for _ in range(2)
        ]
        assert [r.tokens for r in runs[0]] == [r.tokens for r in runs[1]]

    def test_higher_temperature_flattens_the_first_step(self, config, samples):
        bundle = PolicyBundle(config)
        bundle.model.eval()
        inputs = scene_inputs(samples[0], config)
        first = {}
        for temperature in (0.5, 2.0):
            result = generate(bundle.model, bundle.vocab, inputs, config, n=4, temperature=temperature,
                              generator=torch.Generator().manual_seed(9))
            first[temperature] = np.array([r.entropies[0] for r in result.rollouts])
            # the first step conditions on the prompt only
            assert np.ptp(first[temperature]) < 1e-6
        assert np.all(first[2.0] > first[0.5])
        assert np.all(first[2.0] <= math.log(len(V.CONTENT_TOKENS)) + 1e-6)

    def test_bad_temperature(self, config, samples):
        bundle = PolicyBundle(config)
        with pytest.raises(ConfigurationError):
            generate(bundle.model, bundle.vocab, scene_inputs(samples[0], config), config, temperature=0.0)

    def test_teacher_forcing_matches_sampling(self, config, samples):
        bundle = PolicyBundle(config)
        bundle.model.eval()
        inputs = scene_inputs(samples[0], config)
        rollouts = generate(bundle.model, bundle.vocab, inputs, config, n=3, temperature=2.0,
                            generator=torch.Generator().manual_seed(3)).rollouts
        batch, _ = answer_batch([inputs] * 3, [r.answer for r in rollouts], config, bundle.vocab)
        counts = torch.tensor([r.n_sampled for r in rollouts])
        with torch.no_grad():
            logits = bundle.model(batch, mask_for(config, MaskPhase.PHASE2_AND_RL, batch.segments)).logits
        logp, valid = token_logprobs(logits, batch, counts, content_lookup(bundle.vocab), temperature=2.0)
        for i, r in enumerate(rollouts):
            np.testing.assert_allclose(logp[i, : r.n_sampled].double().numpy(), r.logprobs, atol=1e-5)
            assert int(valid[i].sum()) == r.n_sampled

    def test_teacher_forcing_rejects_foreign_tokens(self, config, samples):
        bundle = PolicyBundle(config)
        inputs = scene_inputs(samples[0], config)
        batch, counts = answer_batch([inputs], [[V.ANSWER_START, V.BOS, V.ANSWER_END]], config, bundle.vocab)
        logits = torch.zeros(1, batch.token_ids.shape[1], len(bundle.vocab))
        with pytest.raises(ConfigurationError):
            token_logprobs(logits, batch, counts, content_lookup(bundle.vocab))


def test_collate_rejects_empty_batch():
    with pytest.raises(ConfigurationError):
        collate([], pad_id=0)
