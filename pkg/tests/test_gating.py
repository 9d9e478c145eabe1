import math

import numpy as np
import pytest

import oracles
from lobe_moe import gating as G
from lobe_moe.nn import TrainConfig
from lobe_moe.stats import on_simplex


def test_strategy_catalogue():
    assert len(G.STRATEGY_IDS) == 11
    assert G.STRATEGY_IDS[:6] == ("auc_softmax", "auc_sigmoid", "auc_sparsemax", "confidence", "error",
                                  "diversity")
    assert G.LEARNED_IDS == ("learned_softmax", "learned_sigmoid")


def test_equal_aucs_uniform():
    for fn in (G.auc_softmax, G.auc_sigmoid, G.auc_sparsemax):
        assert np.allclose(fn(np.full(7, 0.7)), 1 / 7, atol=1e-15)


def test_auc_softmax_worked_value():
    w = G.auc_softmax([0.9] + [0.5] * 6)
    expected = math.exp(0.9) / (math.exp(0.9) + 6 * math.exp(0.5))
    assert w[0] == pytest.approx(expected, abs=1e-15)
    assert w[0] == pytest.approx(0.199127, abs=1e-6)


def test_auc_inputs_must_be_finite():
    with pytest.raises(ValueError):
        G.auc_softmax([0.5, np.nan])
    with pytest.raises(ValueError):
        G.auc_sigmoid([np.inf, 0.5])


def test_sparsemax_worked_value():
    w = G.auc_sparsemax([0.9] + [0.5] * 6)
    # tau = (0.9 + 3.0 - 1) / 7
    assert w[0] == pytest.approx(0.9 - 2.9 / 7, abs=1e-15)
    assert w[1:] == pytest.approx([0.5 - 2.9 / 7] * 6, abs=1e-15)
    assert w[0] == pytest.approx(0.485714, abs=1e-6) and w[1] == pytest.approx(0.085714, abs=1e-6)


def test_sparsemax_one_hot():
    w = G.sparsemax([2.0, 0.5, 0.9, 0.1])
    assert w.tolist() == [1.0, 0.0, 0.0, 0.0]


def test_sparsemax_matches_projection_oracle():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        z = rng.normal(scale=rng.uniform(0.1, 3), size=7)
        worst = max(worst, float(np.max(np.abs(G.sparsemax(z) - oracles.simplex_projection(z)))))
    assert worst < 1e-9


def test_confidence_gate():
    assert np.allclose(G.confidence_gate(np.full(7, 0.5)), 1 / 7)
    w = G.confidence_gate([1.0] + [0.5] * 6)
    assert w[0] == pytest.approx(math.e / (math.e + 6), abs=1e-15)
    p = np.random.default_rng(1).random((5, 7))
    assert np.allclose(G.confidence_gate(p), G.confidence_gate(1 - p), atol=1e-15)


def test_error_gate():
    assert np.allclose(G.error_gate(np.full(7, 0.3), 1), 1 / 7)
    w = G.error_gate([1.0, 0.0] + [0.5] * 5, 1)
    expected = 1.0 / (1 + math.exp(-1) + 5 * math.exp(-0.5))
    assert w[0] == pytest.approx(expected, abs=1e-15)
    assert w[0] == pytest.approx(0.227245, abs=1e-6)
    rng = np.random.default_rng(2)
    p, y = rng.random((20, 7)), rng.integers(0, 2, 20)
    w = G.error_gate(p, y)
    assert np.array_equal(np.argmax(w, axis=1), np.argmin(np.abs(p - y[:, None]), axis=1))
    with pytest.raises(ValueError):
        G.error_gate(p, None)


def test_diversity_gate():
    base = np.random.default_rng(3).random(10)
    same = np.tile(base[:, None], (1, 7))
    assert np.allclose(G.diversity_gate(same), 1 / 7)
    anti = same.copy()
    anti[:, 6] = 1 - base
    w = G.diversity_gate(anti)
    assert np.argmax(w) == 6 and np.all(w[6] > w[:6])
    P = np.random.default_rng(4).random((15, 7))
    rho = G.mean_correlations(P)
    for k in range(7):
        ref = np.mean([oracles.pearson(P[:, k], P[:, j]) for j in range(7) if j != k])
        assert abs(rho[k] - ref) < 1e-10
    with pytest.raises(ValueError):
        G.diversity_gate(P[:2])


def test_feature_gates_symmetric():
    f = np.tile(np.random.default_rng(5).normal(size=(1, 6)), (7, 1))
    for fn in (G.magnitude_gate, G.variance_gate, G.entropy_gate):
        assert np.allclose(fn(f), 1 / 7)


def test_magnitude_worked_value():
    f = np.zeros((7, 2))
    f[0] = [3, 4]
    w = G.magnitude_gate(f)
    assert w[0] == pytest.approx(math.exp(5) / (math.exp(5) + 6), abs=1e-15)
    assert w[0] == pytest.approx(0.961143, abs=1e-6)


def test_entropy_constant_vector():
    rng = np.random.default_rng(6)
    f = rng.normal(size=(7, 30))
    f[2] = 1.5
    h = G.histogram_entropies(f)
    assert h[2] == pytest.approx(0.0, abs=1e-8)
    w = G.entropy_gate(f)
    assert np.argmin(w) == 2


def test_histogram_entropy_matches_histogram():
    from lobe_moe.stats import histogram, shannon_entropy
    v = np.random.default_rng(7).normal(size=50)
    h = histogram(v, 20)
    assert G.histogram_entropies(v[None, :])[0] == pytest.approx(shannon_entropy(h.counts / 50), abs=1e-12)


def test_gates_permutation_equivariant():
    rng = np.random.default_rng(8)
    perm = rng.permutation(7)
    aucs = rng.random(7)
    p = rng.random((6, 7))
    f = rng.normal(size=(6, 7, 5))
    for fn, x in ((G.auc_softmax, aucs), (G.auc_sigmoid, aucs), (G.auc_sparsemax, aucs)):
        assert np.allclose(fn(x)[perm], fn(x[perm]), atol=1e-15)
    assert np.allclose(G.confidence_gate(p)[:, perm], G.confidence_gate(p[:, perm]))
    assert np.allclose(G.diversity_gate(p)[perm], G.diversity_gate(p[:, perm]))
    for fn in (G.magnitude_gate, G.variance_gate, G.entropy_gate):
        assert np.allclose(fn(f)[:, perm], fn(f[:, perm]))


def test_normalize_learned():
    for mode in ("softmax", "sigmoid"):
        assert np.allclose(G.normalize_learned(np.zeros(7), mode), 1 / 7)
    z = np.random.default_rng(9).normal(size=7)
    assert np.allclose(G.normalize_learned(z), G.normalize_learned(z + 3.2), atol=1e-15)
    z = np.r_[math.log(2), np.zeros(6)]
    assert G.normalize_learned(z, "softmax")[0] == pytest.approx(0.25, abs=1e-15)
    assert G.normalize_learned(z, "sigmoid")[0] == pytest.approx((2 / 3) / (2 / 3 + 3), abs=1e-15)
    assert G.normalize_learned(z, "sigmoid")[0] == pytest.approx(0.18182, abs=1e-5)
    with pytest.raises(ValueError):
        G.normalize_learned(z, "tanh")


def test_learned_gate_parameter_counts():
    # mlp: (16*64 + 64) + (64*32 + 32) + (32*7 + 7)
    assert G.build_learned_gate("mlp", 16).n_parameters() == 1088 + 2080 + 231 == 3399
    w = G.GATE_WIDTH
    attn = (16 * w + w) + 4 * (w * w + w) + (w * w + w) + (w + 1)
    assert G.build_learned_gate("attention", 16).n_parameters() == attn
    assert G.build_learned_gate("transformer", 16).n_parameters() == attn + (w * w + w) + 3 * 2 * w
    with pytest.raises(ValueError):
        G.build_learned_gate("cnn", 16)
    with pytest.raises(ValueError):
        G.build_learned_gate("mlp", 0)


@pytest.mark.parametrize("arch", G.ARCHITECTURES)
def test_learned_gate_shapes_and_uniform_init(arch):
    gate = G.build_learned_gate(arch, 5)
    phi = np.random.default_rng(10).normal(size=(4, 7, 5))
    assert gate(phi).shape == (4, 7)
    assert np.allclose(gate.weights(phi).data, 1 / 7, atol=1e-15)
    assert np.allclose(gate.weights(np.zeros((2, 7, 5))).data, 1 / 7, atol=1e-15)


@pytest.mark.parametrize("arch", ("attention", "transformer"))
def test_token_gates_permutation_equivariant(arch):
    gate = G.build_learned_gate(arch, 4, seed=3)
    rng = np.random.default_rng(11)
    for p in gate.parameters():
        p.data = rng.normal(size=p.data.shape) * 0.5
    phi = rng.normal(size=(3, 7, 4))
    perm = rng.permutation(7)
    assert np.allclose(gate(phi).data[:, perm], gate(phi[:, perm]).data, atol=1e-10)


def _perfect_expert_context(seed=0, n_patients=120):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n_patients)
    p = rng.random((n_patients, 7))
    p[:, 3] = np.where(y == 1, 0.95, 0.05)
    phi = rng.normal(size=(n_patients, 7, 4))
    phi[:, 3, 0] = 3.0  # lets every architecture recognise expert 3
    return p, phi, y


@pytest.mark.parametrize("arch", G.ARCHITECTURES)
def test_trained_gate_prefers_perfect_expert(arch):
    p, phi, y = _perfect_expert_context()
    gate = G.build_learned_gate(arch, 4, seed=1)
    G.train_learned_gate(gate, p, phi, y, config=TrainConfig(learning_rate=1e-2, max_epochs=40))
    assert np.argmax(gate.weights(phi).data.mean(axis=0)) == 3


def test_entropy_term_alone_drives_towards_one_hot():
    from lobe_moe.nn import AdamW, entropy
    gate = G.build_learned_gate("mlp", 4, seed=2)
    phi = np.random.default_rng(12).normal(size=(16, 7, 4))
    gate.head.weight.data = np.random.default_rng(13).normal(size=gate.head.weight.data.shape) * 0.1
    opt = AdamW.single(gate.parameters(), 1e-2)
    start = entropy(gate.weights(phi)).mean().item()
    for _ in range(300):
        gate.zero_grad()
        loss = 0.01 * entropy(gate.weights(phi)).mean()
        loss.backward()
        opt.step()
    end = entropy(gate.weights(phi)).mean().item()
    assert end < 0.1 * start


def test_trained_gate_deterministic():
    p, phi, y = _perfect_expert_context(1, 40)
    states = []
    for _ in range(2):
        gate = G.build_learned_gate("attention", 4, seed=5)
        G.train_learned_gate(gate, p, phi, y, config=TrainConfig(max_epochs=3))
        states.append(gate.state_dict())
    assert all(np.array_equal(states[0][k], states[1][k]) for k in states[0])


def test_select_best_strategy():
    assert G.select_best_strategy([("a", 0.80), ("b", 0.85), ("c", 0.70)]) == ("b", 0.85)
    assert G.select_best_strategy([("a", 0.6)]) == ("a", 0.6)
    assert G.select_best_strategy([("a", 0.9), ("b", 0.8), ("c", 0.9)])[0] == "a"
    with pytest.raises(ValueError):
        G.select_best_strategy([])


def test_fitted_gates_on_context(tmp_path):
    p, phi, y = _perfect_expert_context(2, 40)
    ctx = G.GatingContext(np.linspace(0.5, 0.9, 7), p, phi, y, [f"P{i // 2}" for i in range(40)])
    gates, scores = G.evaluate_strategies(ctx, "mlp", TrainConfig(max_epochs=5))
    assert set(gates) == set(G.STRATEGY_IDS)
    for s, gate in gates.items():
        w = gate.weights(p, phi)
        assert w.shape == (40, 7) and all(on_simplex(row) for row in w), s
        assert gate.sample_dependent == (s in G.SAMPLE_DEPENDENT)
        assert 0.0 <= scores[s] <= 1.0
    # error weights are frozen from the validation labels
    assert np.allclose(gates["error"].static, G.error_gate(p, y).mean(axis=0))
    rows = [(0, f"k:{s}", scores[s], gates[s].weights(p, phi).mean(axis=0)) for s in G.STRATEGY_IDS]
    G.write_gating_report(tmp_path / "g.csv", rows, 7)
    back = G.read_gating_report(tmp_path / "g.csv")
    assert [r["strategy"] for r in back] == [f"k:{s}" for s in G.STRATEGY_IDS]
    assert float(back[0]["val_auc"]) == scores["auc_softmax"]


def test_context_validation():
    with pytest.raises(ValueError):
        G.GatingContext(np.full(7, 1.2), np.zeros((3, 7)), np.zeros((3, 7, 2)))
    with pytest.raises(ValueError):
        G.GatingContext(np.full(7, 0.5), np.zeros((3, 6)), np.zeros((3, 6, 2)))


def test_feature_scaler():
    phi = np.random.default_rng(14).normal(3, 2, size=(50, 7, 4))
    phi[:, 0, 0] = 1.0
    s = G.FeatureScaler.fit(phi)
    z = s(phi)
    assert np.allclose(z.mean(axis=0), 0, atol=1e-12)
    assert np.all(z[:, 0, 0] == 0)
