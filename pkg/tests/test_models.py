import numpy as np
import pytest

from avtp_ids.models import (
    WINDOW_SIZES,
    ContaminationError,
    TrainConfig,
    TrainedModel,
    UnsupportedWindowError,
    build_cae,
    build_lstmae,
    build_model,
    input_shape,
    param_count,
    reconstruction_error,
    reconstruction_errors,
    train,
)
from avtp_ids.nn import Linear, Sequential, grad_check, load_model, save_model
from avtp_ids.nn.functional import mse_loss_grad

CAE_PARAMS = {8: 1_235_329, 16: 4_382_593, 24: 9_627_009, 32: 16_968_577, 40: 26_407_297}


def cae_table(w):
    return [
        ("conv1", (32, w // 2, 29)), ("conv2", (64, w // 4, 15)), ("conv3", (128, w // 8, 8)),
        ("flatten", (128 * w,)), ("embedding", (64 * w,)), ("expand", (128 * w,)),
        ("unflatten", (128, w // 8, 8)), ("deconv1", (64, w // 4, 15)),
        ("deconv2", (32, w // 2, 29)), ("deconv3", (1, w, 58)),
    ]


def lstm_table(w):
    return [("enc_lstm1", (w, 20)), ("enc_lstm2", (10,)), ("repeat", (w, 10)),
            ("dec_lstm1", (w, 10)), ("dec_lstm2", (w, 20)), ("output", (w, 58))]


@pytest.mark.parametrize("w", WINDOW_SIZES)
def test_parameter_counts(w):
    assert param_count(build_cae(w)) == CAE_PARAMS[w]
    assert param_count(build_lstmae(w)) == 12_338


@pytest.mark.parametrize("w", WINDOW_SIZES)
def test_shape_traces(w):
    cae = dict(build_cae(w).shape_trace((1, w, 58)))
    for name, shape in cae_table(w):
        assert cae[name] == shape, name
    lstm = dict(build_lstmae(w).shape_trace((w, 58)))
    for name, shape in lstm_table(w):
        assert lstm[name] == shape, name


def test_forward_shapes_match_trace():
    x = np.random.default_rng(0).random((2, 1, 8, 58))
    assert build_cae(8).forward(x).shape == x.shape
    s = np.random.default_rng(0).random((2, 24, 58))
    assert build_lstmae(24).forward(s).shape == s.shape


def test_unsupported_window():
    with pytest.raises(UnsupportedWindowError):
        build_cae(12)
    with pytest.raises(UnsupportedWindowError):
        build_lstmae(0)
    with pytest.raises(ValueError):
        build_model("gru", 8)
    assert input_shape("cae", 16) == (1, 16, 58) and input_shape("lstmae", 16) == (16, 58)


# Seeds whose sample and parameter point keep every +-h probe on one side of
# every ReLU kink, so central differences are valid for all parameters.
CAE_KINK_FREE_SEED = 1
LSTM_KINK_FREE_SEED = 0


def random_biases(model, seed: int):
    """Redraw conv and dense biases uniform in +-1/sqrt(fan_in).

    Zero biases put every hidden ReLU of a fresh CAE next to its kink, so the
    gradient check probes a point with random biases instead.
    """
    rng = np.random.default_rng(seed + 1000)
    for layer in model.layers:
        bias = getattr(layer, "bias", None)
        if bias is None:
            continue
        bound = 1.0 / np.sqrt(layer.weight.value.size / bias.value.size)
        bias.value[...] = rng.uniform(-bound, bound, bias.value.shape)
    return model


def _all_gradients_live(model, x) -> bool:
    model.zero_grad()
    pred = model.forward(x)
    model.backward(mse_loss_grad(pred, x))
    live = all(np.any(p.grad != 0) for p in model.parameters())
    model.zero_grad()
    return live


def test_reduced_width_gradients():
    seed = CAE_KINK_FREE_SEED
    x = np.random.default_rng(seed).random((1, 1, 8, 58))
    model = random_biases(build_cae(8, seed=seed, width_divisor=8), seed)
    assert _all_gradients_live(model, x)
    report = grad_check(model, x, max_per_param=60)
    assert report.kink_crossings == 0
    assert report.max_rel_error < 1e-3
    seed = LSTM_KINK_FREE_SEED
    s = np.random.default_rng(seed).random((1, 8, 58))
    model = build_lstmae(8, seed=seed)
    assert _all_gradients_live(model, s)
    report = grad_check(model, s, max_per_param=60)
    assert report.kink_crossings == 0
    assert report.max_rel_error < 1e-3


def test_kink_crossings_are_reported():
    # Zero biases leave hidden pre-activations within h of zero.
    x = np.random.default_rng(1).random((1, 1, 8, 58))
    report = grad_check(build_cae(8, seed=1, width_divisor=8), x, max_per_param=60)
    assert report.kink_crossings > 0


def test_error_examples():
    ident = Sequential([Linear(3, 3)])
    ident.layers[0].weight.value[...] = np.eye(3)
    ident.layers[0].bias.value[...] = 0.0
    assert reconstruction_error(ident, np.ones(3)) == 0.0
    zero = Sequential([Linear(3, 3)])
    zero.layers[0].weight.value[...] = 0.0
    zero.layers[0].bias.value[...] = 0.0
    assert reconstruction_error(zero, np.ones(3)) == 1.0


def test_error_independent_of_batch():
    model = build_lstmae(8, seed=3)
    x = np.random.default_rng(3).random((9, 8, 58))
    together = reconstruction_errors(model, x)
    alone = np.array([reconstruction_error(model, xi) for xi in x])
    assert np.abs(together - alone).max() < 1e-12
    cae = build_cae(8, seed=3, width_divisor=4)
    xi = x[:, None]
    assert np.abs(reconstruction_errors(cae, xi, batch_size=4)
                  - reconstruction_errors(cae, xi, batch_size=9)).max() < 1e-12


def test_error_shape_mismatch():
    with pytest.raises(ValueError):
        reconstruction_error(build_cae(8, width_divisor=8), np.zeros((8, 58)))


def tiny_data(n=64, w=8, seed=0):
    rng = np.random.default_rng(seed)
    return rng.random((n, w, 58)) * 0.2 + 0.4


def test_training_is_seeded_and_decreasing():
    x = tiny_data()
    cfg = TrainConfig(max_epochs=3, seed=5, lr=1e-3)
    a = train(build_lstmae(8, seed=1), x[:56], x[56:], cfg, kind="lstmae", w=8)
    b = train(build_lstmae(8, seed=1), x[:56], x[56:], cfg, kind="lstmae", w=8)
    for p, q in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(p.value, q.value)
    assert a.history[1][1] <= a.history[0][1]
    assert len(a.history) == 3 and a.mu > 0 and a.sigma > 0


def test_training_constant_windows_memorised():
    x = np.full((32, 8, 58), 0.5)
    tm = train(build_lstmae(8, seed=0), x, x[:4], TrainConfig(max_epochs=60, lr=1e-2), kind="lstmae", w=8)
    assert tm.history[-1][2] < 1e-4
    assert reconstruction_error(tm, x[0]) < 1e-4


def test_early_stopping_restores_best():
    x = tiny_data(40)
    # lr large enough to make validation loss bounce.
    tm = train(build_lstmae(8, seed=0), x[:32], x[32:], TrainConfig(max_epochs=40, patience=2, lr=5e-2),
               kind="lstmae", w=8)
    vals = [h[2] for h in tm.history]
    assert tm.best_epoch == int(np.argmin(vals)) + 1
    assert tm.stopped_early == (len(vals) < 40)
    assert reconstruction_errors(tm.model, x[32:]).mean() == pytest.approx(min(vals), rel=1e-12)


def test_contamination_rejected():
    x = tiny_data(8)
    with pytest.raises(ContaminationError):
        train(build_lstmae(8), x, x, train_labels=np.array([0] * 7 + [1]))


def test_checkpoint_round_trip(tmp_path):
    model = build_cae(8, seed=4)
    x = np.random.default_rng(4).random((2, 1, 8, 58))
    save_model(model, tmp_path / "m.bin", meta={"w": 8})
    back, meta = load_model(tmp_path / "m.bin")
    assert meta == {"w": 8}
    assert np.array_equal(back.forward(x), model.forward(x))


def test_trained_model_round_trip_and_history(tmp_path):
    x = tiny_data(24)
    tm = train(build_lstmae(8), x[:20], x[20:], TrainConfig(max_epochs=2), kind="lstmae", w=8)
    tm.save(tmp_path / "t.bin")
    back = TrainedModel.load(tmp_path / "t.bin")
    assert (back.mu, back.sigma, back.history) == (tm.mu, tm.sigma, tm.history)
    assert np.array_equal(back.errors(x), tm.errors(x))
    tm.write_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss" and len(lines) == 3


def test_checkpoint_sizes(tmp_path):
    size = TrainedModel("cae", 40, build_cae(40)).save(tmp_path / "c.bin", dtype="float32")
    assert abs(size - 101 * 2**20) <= 0.1 * 101 * 2**20
    small = TrainedModel("lstmae", 8, build_lstmae(8)).save(tmp_path / "l.bin", dtype="float32")
    assert 40_000 < small < 60_000
