import copy
import json
import os
from dataclasses import replace

import numpy as np
import pytest
import torch

from ptcl.curriculum import CurriculumState, assign_weights
from ptcl.datasets import DriftConfig, generate_drift
from ptcl.decoder import Decoder, generate_pseudo_labels
from ptcl.encoders import EncoderConfig, build_encoder, embed_nodes
from ptcl.training import (MethodSpec, UnsupportedMethodError, _Context,
                           TrainHistory, e_step, m_step, run_method,
                           scaled_ce_loss, warmup)

torch.set_num_threads(1)


@pytest.fixture(scope="module")
def tiny_dataset():
    return generate_drift(DriftConfig(node_count=120, event_count=1200,
                                      class_count=2, switch_probability=0.02,
                                      homophily=0.8, feature_noise=0.5, seed=0,
                                      feature_dim=4))


def tiny_encoder_config(kind="tgat"):
    return EncoderConfig(encoder_kind=kind, time_dim=8, output_dim=16,
                         attention_heads=2, layers=1, neighbor_k=5, dropout=0.1)


def tiny_spec(**kw):
    base = dict(method="ptcl", beta=0.5, gamma=0.5, em_iterations=2,
                epochs_per_step=3, patience=5, learning_rate=1e-3,
                batch_size=128, seed=0, warmup_epochs=2, decoder_epochs=30)
    base.update(kw)
    return MethodSpec(**base)


def state_bytes(module):
    return [p.detach().clone() for p in module.parameters()]


def states_equal(a, b):
    return all(torch.equal(x, y) for x, y in zip(a, b))


class TestMethodSpec:
    def test_ptcl_forces_alpha_zero(self):
        with pytest.raises(ValueError):
            MethodSpec(method="ptcl", alpha=0.3)
        MethodSpec(method="sem", alpha=0.3)  # allowed

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            MethodSpec(beta=1.2)
        with pytest.raises(ValueError):
            MethodSpec(gamma=0.0)
        with pytest.raises(ValueError):
            MethodSpec(method="bogus")


class TestEStepIsolation:
    def test_encoder_untouched_and_pseudo_ignored(self, tiny_dataset):
        torch.manual_seed(0)
        spec = tiny_spec()
        ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
        history = TrainHistory()
        before = state_bytes(ctx.encoder)

        pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                        ctx.split, ctx.sampler, ctx.enc_cfg)
        rng = np.random.default_rng(0)
        shuffled = pseudo.replace_labels(rng.permutation(pseudo.labels))

        torch.manual_seed(123)
        dec_a = copy.deepcopy(ctx.decoder)
        ctx_a = ctx
        e_step(ctx_a, history, iteration=0, pseudo=pseudo)
        assert states_equal(before, state_bytes(ctx.encoder))
        loss_a = history.step_epoch_losses[-1]["epoch_losses"]

        # rerun from the same decoder state with permuted pseudo-labels
        ctx.decoder.load_state_dict(dec_a.state_dict())
        torch.manual_seed(123)
        e_step(ctx, history, iteration=0, pseudo=shuffled)
        loss_b = history.step_epoch_losses[-1]["epoch_losses"]
        assert loss_a == loss_b  # bit-identical: pseudo-labels never enter

    def test_sem_alpha_zero_equals_ptcl_losses(self, tiny_dataset):
        cfg = tiny_encoder_config()
        histories = {}
        for method in ("ptcl", "sem"):
            torch.manual_seed(7)
            spec = tiny_spec(method=method, alpha=0.0)
            ctx = _Context(tiny_dataset, spec, cfg, "reference", None)
            history = TrainHistory()
            torch.manual_seed(99)
            e_step(ctx, history, iteration=0)
            histories[method] = history.step_epoch_losses[-1]["epoch_losses"]
        for a, b in zip(histories["ptcl"], histories["sem"]):
            assert a == pytest.approx(b, abs=1e-9)


class TestMStep:
    def test_decoder_frozen_bit_identical(self, tiny_dataset):
        torch.manual_seed(0)
        spec = tiny_spec()
        ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
        history = TrainHistory()
        pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                        ctx.split, ctx.sampler, ctx.enc_cfg)
        state = CurriculumState(iteration=1, decay_rate=0.5, strategy="temporal")
        pseudo = assign_weights(pseudo, ctx.graph, state)
        before = state_bytes(ctx.decoder)
        enc_before = state_bytes(ctx.encoder)
        m_step(ctx, history, iteration=1, pseudo=pseudo)
        assert states_equal(before, state_bytes(ctx.decoder))
        assert not states_equal(enc_before, state_bytes(ctx.encoder))
        assert all(p.requires_grad for p in ctx.decoder.parameters())

    def test_beta_zero_gradient_independent_of_pseudo(self, tiny_dataset):
        torch.manual_seed(3)
        spec = tiny_spec(beta=0.0)
        ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
        pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                        ctx.split, ctx.sampler, ctx.enc_cfg)
        rng = np.random.default_rng(5)
        permuted = pseudo.replace_labels(rng.permutation(pseudo.labels))

        def grads_for(ps):
            from ptcl.training import _mstep_sets
            nodes, times, labels, scales = _mstep_sets(ctx, ps)
            ctx.encoder.zero_grad()
            ctx.encoder.eval()  # no dropout: deterministic graph
            ctx.decoder.eval()
            emb = embed_nodes(ctx.encoder, ctx.graph, ctx.sampler,
                              nodes[:256], times[:256], ctx.enc_cfg)
            loss = scaled_ce_loss(ctx.decoder(emb),
                                  torch.from_numpy(labels[:256]),
                                  torch.from_numpy(scales[:256]).float())
            loss.backward()
            return torch.cat([p.grad.flatten() for p in ctx.encoder.parameters()
                              if p.grad is not None]).clone()

        g1 = grads_for(pseudo)
        g2 = grads_for(permuted)
        assert float((g1 - g2).norm()) < 1e-9

    def test_beta_one_with_empty_pseudo_rejected(self, tiny_dataset):
        torch.manual_seed(0)
        spec = tiny_spec(beta=1.0)
        ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
        empty = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                       ctx.split, ctx.sampler, ctx.enc_cfg)
        empty = empty.__class__(empty.nodes[:0], empty.times[:0], empty.labels[:0],
                                empty.weights[:0], empty.probs[:0], 0)
        with pytest.raises(ValueError):
            m_step(ctx, TrainHistory(), iteration=1, pseudo=empty)

    def test_weight_scaling_is_linear(self, tiny_dataset):
        # doubling one entry's weight doubles its loss contribution
        torch.manual_seed(1)
        logits = torch.randn(4, 2)
        labels = torch.tensor([0, 1, 0, 1])
        base = torch.tensor([1.0, 1.0, 1.0, 1.0])
        bumped = torch.tensor([2.0, 1.0, 1.0, 1.0])
        l_base = scaled_ce_loss(logits, labels, base)
        l_bump = scaled_ce_loss(logits, labels, bumped)
        ce0 = torch.nn.functional.cross_entropy(logits[:1], labels[:1])
        assert float(l_bump - l_base) == pytest.approx(float(ce0) / 4, abs=1e-6)


class TestCftDegeneracy:
    def test_mstep_beta1_weights1_replicated_equals_cft_loss(self, tiny_dataset):
        # compare the two independently built training sets: the backbone
        # step at beta=1 with pseudo-labels replaced by replicated finals,
        # and the copy-final supervised set restricted to non-final pairs
        from ptcl.training import _joint_sets, _mstep_sets

        torch.manual_seed(2)
        spec = tiny_spec(beta=1.0)
        ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
        ctx.encoder.eval()
        ctx.decoder.eval()
        pseudo = generate_pseudo_labels(ctx.graph, ctx.encoder, ctx.decoder,
                                        ctx.split, ctx.sampler, ctx.enc_cfg)
        mask = np.isin(pseudo.nodes, ctx.split.train_nodes)
        replicated = pseudo.__class__(pseudo.nodes[mask], pseudo.times[mask],
                                      ctx.labels[pseudo.nodes[mask]],
                                      np.ones(int(mask.sum())),
                                      pseudo.probs[mask], pseudo.iteration)
        m_nodes, m_times, m_labels, m_scales = _mstep_sets(ctx, replicated)
        j_nodes, j_times, j_labels, j_scales = _joint_sets(ctx, "cft", None)
        # drop the final-timestamp pairs from the cft set and the zero-scaled
        # final entries from the backbone set so the batches coincide
        finals = {(int(u), ctx.graph.final_timestamp(int(u)))
                  for u in ctx.split.train_nodes}
        j_keep = np.asarray([(int(u), float(t)) not in finals
                             for u, t in zip(j_nodes, j_times)])
        m_keep = m_scales > 0.0
        assert np.array_equal(m_nodes[m_keep], j_nodes[j_keep])
        assert np.array_equal(m_labels[m_keep], j_labels[j_keep])

        with torch.no_grad():
            for lo in range(0, 400, 200):
                sel = slice(lo, lo + 200)
                emb = embed_nodes(ctx.encoder, ctx.graph, ctx.sampler,
                                  m_nodes[m_keep][sel], m_times[m_keep][sel],
                                  ctx.enc_cfg)
                m_loss = scaled_ce_loss(ctx.decoder(emb),
                                        torch.from_numpy(m_labels[m_keep][sel]),
                                        torch.from_numpy(m_scales[m_keep][sel]).float())
                cft_loss = scaled_ce_loss(ctx.decoder(emb),
                                          torch.from_numpy(j_labels[j_keep][sel]),
                                          torch.from_numpy(j_scales[j_keep][sel]).float())
                assert float(m_loss) == pytest.approx(float(cft_loss), abs=1e-6)


class TestWarmup:
    def test_loss_decreases_by_epoch_20(self, tiny_dataset):
        for seed in range(2):
            torch.manual_seed(seed)
            spec = tiny_spec(seed=seed, warmup_epochs=20, patience=25)
            ctx = _Context(tiny_dataset, spec, tiny_encoder_config(), "reference", None)
            history = TrainHistory()
            warmup(ctx, history)
            assert history.warmup_losses[19] < history.warmup_losses[0]

    def test_saturated_scores_drive_loss_to_zero(self):
        logits = torch.tensor([30.0, 30.0, -30.0, -30.0])
        targets = torch.tensor([1.0, 1.0, 0.0, 0.0])
        loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)
        assert float(loss) < 1e-9

    def test_zero_logit_loss_is_ln2(self):
        logits = torch.zeros(10)
        targets = torch.cat([torch.ones(5), torch.zeros(5)])
        loss = torch.nn.functional.binary_cross_entropy_with_logits(logits, targets)
        assert float(loss) == pytest.approx(np.log(2), abs=1e-6)


class TestRunMethod:
    def test_zero_em_iterations_is_warmup_plus_one_e_step(self, tiny_dataset):
        spec = tiny_spec(em_iterations=0)
        result = run_method(tiny_dataset, spec, tiny_encoder_config())
        assert result.history.tau_values == [0]
        phases = [e["phase"] for e in result.history.step_epoch_losses]
        assert phases == ["e"]

    def test_tau_sequence(self, tiny_dataset):
        spec = tiny_spec(em_iterations=3, em_patience=10)
        result = run_method(tiny_dataset, spec, tiny_encoder_config())
        assert result.history.tau_values == [0, 1, 2, 3]

    def test_deterministic_history(self, tiny_dataset, tmp_path):
        spec = tiny_spec(em_iterations=1)
        out_a = str(tmp_path / "a")
        out_b = str(tmp_path / "b")
        run_method(tiny_dataset, spec, tiny_encoder_config(), out_dir=out_a)
        run_method(tiny_dataset, spec, tiny_encoder_config(), out_dir=out_b)
        with open(os.path.join(out_a, "history.jsonl")) as fh:
            hist_a = fh.read()
        with open(os.path.join(out_b, "history.jsonl")) as fh:
            hist_b = fh.read()
        assert hist_a == hist_b

    def test_dls_requires_dynamic_labels(self, tiny_dataset):
        stripped = tiny_dataset.without_dynamic_labels()
        spec = tiny_spec(method="dls")
        with pytest.raises(UnsupportedMethodError):
            run_method(stripped, spec, tiny_encoder_config())

    @pytest.mark.parametrize("method", ["cft", "dls", "npl", "ptcl2d", "sem"])
    def test_all_methods_run(self, tiny_dataset, method):
        spec = tiny_spec(method=method, em_iterations=1,
                         alpha=0.5 if method == "sem" else 0.0)
        result = run_method(tiny_dataset, spec, tiny_encoder_config())
        assert 0.0 <= result.test_metric <= 1.0

    def test_graphmixer_backbone_runs(self, tiny_dataset):
        spec = tiny_spec(em_iterations=1)
        result = run_method(tiny_dataset, spec, tiny_encoder_config("graphmixer"))
        assert 0.0 <= result.test_metric <= 1.0

    def test_metrics_ignore_dynamic_labels(self, tiny_dataset):
        spec = tiny_spec(em_iterations=1)
        a = run_method(tiny_dataset, spec, tiny_encoder_config())
        b = run_method(tiny_dataset.without_dynamic_labels(), spec,
                       tiny_encoder_config())
        assert a.test_metric == b.test_metric
        assert a.val_metric == b.val_metric

    def test_multi_seed_run_aggregates_and_records_failures(self, tiny_dataset):
        from ptcl.evaluation import multi_seed_run

        spec = tiny_spec(method="dls", em_iterations=0)
        report = multi_seed_run(spec, tiny_dataset.without_dynamic_labels(),
                                tiny_encoder_config(), seeds=[0])
        assert report.per_seed_values == []
        assert report.failures and report.failures[0]["seed"] == 0

        spec = tiny_spec(em_iterations=1)
        report = multi_seed_run(spec, tiny_dataset, tiny_encoder_config(),
                                seeds=[0, 1])
        assert len(report.per_seed_values) == 2
        assert report.mean is not None and report.standard_deviation is not None
        assert len(report.convergence_curve) == 2

    def test_artifacts_written(self, tiny_dataset, tmp_path):
        out = str(tmp_path / "run")
        spec = tiny_spec(em_iterations=2)
        run_method(tiny_dataset, spec, tiny_encoder_config(), out_dir=out)
        files = set(os.listdir(out))
        assert {"history.jsonl", "checkpoint.npz", "predictions.csv",
                "result.json", "split.json"} <= files
        assert "pseudo_iter_1.csv" in files
        with open(os.path.join(out, "result.json")) as fh:
            summary = json.load(fh)
        assert summary["method"] == "ptcl"
