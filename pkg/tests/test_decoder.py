import numpy as np
import pytest
import torch

from ptcl.decoder import (Decoder, decode, dump_pseudo_labels,
                          generate_pseudo_labels, load_pseudo_labels,
                          pseudo_label_index)
from ptcl.encoders import EncoderConfig, build_encoder
from ptcl.graph import Event, SplitSpec, build_graph
from ptcl.sampling import ReferenceSampler


def four_event_graph():
    # nodes 0,1,2; boundary chosen so t=4 stays out
    events = [Event(0, 1, 1.0), Event(0, 2, 2.0), Event(1, 2, 3.0), Event(0, 1, 4.0)]
    return build_graph(events, None, class_count=3)


def full_split(graph, boundary):
    labeled = [u for u in range(graph.node_count) if graph.has_events(u)]
    return SplitSpec(train_nodes=np.asarray(labeled[:1], dtype=np.int64),
                     val_nodes=np.asarray(labeled[1:2], dtype=np.int64),
                     test_nodes=np.asarray(labeled[2:], dtype=np.int64),
                     boundary_time=boundary)


class TestDecode:
    def test_zero_final_layer_gives_uniform(self):
        dec = Decoder(8, 4)
        with torch.no_grad():
            dec.net[-1].weight.zero_()
            dec.net[-1].bias.zero_()
        probs = decode(dec, np.random.default_rng(0).normal(size=(5, 8)))
        assert np.allclose(probs, 0.25, atol=1e-7)

    def test_rows_sum_to_one(self):
        dec = Decoder(8, 3)
        probs = decode(dec, np.random.default_rng(1).normal(size=(20, 8)))
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_binary_probability_is_sigmoid_of_logit_gap(self):
        dec = Decoder(6, 2, dropout=0.0)
        emb = np.random.default_rng(2).normal(size=(10, 6)).astype(np.float32)
        probs = decode(dec, emb)
        dec.eval()
        with torch.no_grad():
            logits = dec(torch.from_numpy(emb)).numpy()
        expected = 1.0 / (1.0 + np.exp(-(logits[:, 1] - logits[:, 0])))
        assert np.allclose(probs[:, 1], expected, atol=1e-6)

    def test_dimension_mismatch_rejected(self):
        dec = Decoder(8, 2)
        with pytest.raises(ValueError):
            decode(dec, np.zeros((3, 5)))


class TestPseudoLabelIndex:
    def test_four_event_graph_enumeration(self):
        g = four_event_graph()
        boundary = 3.0
        # brute force: all (u, t) with t in timeline(u) minus final, t <= boundary
        expect = set()
        for u in range(3):
            tl = g.timeline(u).tolist()
            for t in tl[:-1]:
                if t <= boundary:
                    expect.add((u, t))
        nodes, times = pseudo_label_index(g, [0, 1, 2], boundary)
        got = set(zip(nodes.tolist(), times.tolist()))
        assert got == expect

    def test_excludes_final_and_post_boundary(self):
        g = four_event_graph()
        nodes, times = pseudo_label_index(g, [0, 1, 2], 3.0)
        for u, t in zip(nodes, times):
            assert t <= 3.0
            assert t != g.final_timestamp(int(u))

    def test_size_formula(self):
        g = four_event_graph()
        boundary = 3.0
        expected = sum(
            sum(1 for t in g.timeline(u)[:-1] if t <= boundary)
            for u in range(3))
        nodes, _ = pseudo_label_index(g, [0, 1, 2], boundary)
        assert nodes.size == expected


class TestGeneratePseudoLabels:
    def setup_method(self):
        torch.manual_seed(0)
        self.graph = four_event_graph()
        self.cfg = EncoderConfig(encoder_kind="tgat", time_dim=4, output_dim=8,
                                 attention_heads=2, layers=1, neighbor_k=3, dropout=0.0)
        self.encoder = build_encoder(self.cfg, self.graph)
        self.sampler = ReferenceSampler(self.graph)
        self.split = full_split(self.graph, boundary=3.0)

    def test_constant_decoder_gives_constant_class(self):
        dec = Decoder(8, 3, dropout=0.0)
        with torch.no_grad():
            dec.net[-1].weight.zero_()
            dec.net[-1].bias.copy_(torch.tensor([0.0, 5.0, 0.0]))
        pseudo = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                        self.sampler, self.cfg)
        assert (pseudo.labels == 1).all()

    def test_argmax_tie_goes_to_lowest_class(self):
        dec = Decoder(8, 3, dropout=0.0)
        with torch.no_grad():
            dec.net[-1].weight.zero_()
            dec.net[-1].bias.zero_()  # all logits equal
        pseudo = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                        self.sampler, self.cfg)
        assert (pseudo.labels == 0).all()

    def test_deterministic(self):
        dec = Decoder(8, 3)
        a = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                   self.sampler, self.cfg)
        b = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                   self.sampler, self.cfg)
        assert np.array_equal(a.labels, b.labels)
        assert np.array_equal(a.times, b.times)

    def test_weights_initialized_to_one(self):
        dec = Decoder(8, 3)
        pseudo = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                        self.sampler, self.cfg)
        assert (pseudo.weights == 1.0).all()

    def test_mean_field_independence(self):
        # decoding happens row-wise: changing one pair's embedding leaves
        # every other pair's label untouched
        dec = Decoder(8, 3, dropout=0.0)
        pseudo = generate_pseudo_labels(self.graph, self.encoder, dec, self.split,
                                        self.sampler, self.cfg)
        nodes, times = pseudo.nodes, pseudo.times
        from ptcl.encoders import embed_nodes
        with torch.no_grad():
            emb = embed_nodes(self.encoder.eval(), self.graph, self.sampler,
                              nodes, times, self.cfg)
        base = decode(dec, emb).argmax(axis=1)
        emb2 = emb.clone()
        emb2[0] += 100.0
        changed = decode(dec, emb2).argmax(axis=1)
        assert np.array_equal(base[1:], changed[1:])


class TestDumpRoundtrip:
    def test_dump_and_load(self, tmp_path):
        torch.manual_seed(1)
        g = four_event_graph()
        cfg = EncoderConfig(encoder_kind="graphmixer", time_dim=4, output_dim=8,
                            layers=1, neighbor_k=3, dropout=0.0)
        enc = build_encoder(cfg, g)
        dec = Decoder(8, 3)
        split = full_split(g, boundary=3.0)
        pseudo = generate_pseudo_labels(g, enc, dec, split, ReferenceSampler(g),
                                        cfg, iteration=4)
        path = str(tmp_path / "dump.csv")
        dump_pseudo_labels(path, pseudo)
        loaded = load_pseudo_labels(path)
        assert np.array_equal(loaded.nodes, pseudo.nodes)
        assert np.array_equal(loaded.labels, pseudo.labels)
        assert np.allclose(loaded.times, pseudo.times)
        assert np.allclose(loaded.weights, pseudo.weights)
        assert loaded.iteration == 4
