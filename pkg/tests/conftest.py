from pathlib import Path

import numpy as np
import pytest

from fgcam import kernels
from fgcam import model_graph as mg
from fgcam.model_graph import LayerSpec, ModelGraph

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test under both kernel backends."""
    with kernels.use_backend(request.param):
        yield request.param


@pytest.fixture(scope="session")
def tiny_model_path() -> Path:
    path = FIXTURES / "tiny-cnn.fgm"
    if not path.exists():
        pytest.skip("tiny-cnn.fgm fixture not present")
    return path


@pytest.fixture(scope="session")
def tiny_model(tiny_model_path) -> ModelGraph:
    return mg.fold_batchnorm(mg.load_model(tiny_model_path))


@pytest.fixture(scope="session")
def fixture_entries(tiny_model_path) -> list[dict]:
    import json
    listfile = FIXTURES / "eval_list.jsonl"
    if not listfile.exists():
        pytest.skip("eval_list.jsonl fixture not present")
    return [json.loads(line) for line in listfile.read_text().splitlines() if line.strip()]


def make_random_model(rng: np.random.Generator, *, with_bn: bool = False,
                      in_shape=(2, 12, 12), classes: int = 4) -> ModelGraph:
    """Small random conv/pool/linear stack for property tests."""
    c, h, w = in_shape
    c1, c2 = int(rng.integers(2, 5)), int(rng.integers(2, 5))
    layers = [
        LayerSpec(kind="conv2d", name="conv1",
                  weights=rng.standard_normal((c1, c, 3, 3)).astype(np.float32) * 0.5,
                  bias=rng.standard_normal(c1).astype(np.float32) * 0.1,
                  stride=(1, 1), padding=(1, 1)),
    ]
    if with_bn:
        layers.append(LayerSpec(
            kind="batchnorm2d", name="bn1",
            gamma=(rng.random(c1).astype(np.float32) + 0.5),
            beta=rng.standard_normal(c1).astype(np.float32),
            running_mean=rng.standard_normal(c1).astype(np.float32),
            running_var=(rng.random(c1).astype(np.float32) + 0.5),
            eps=1e-5))
    layers += [
        LayerSpec(kind="relu", name="relu1"),
        LayerSpec(kind="maxpool2d", name="pool1", kernel=(2, 2), stride=(2, 2)),
        LayerSpec(kind="conv2d", name="conv2",
                  weights=rng.standard_normal((c2, c1, 3, 3)).astype(np.float32) * 0.5,
                  bias=rng.standard_normal(c2).astype(np.float32) * 0.1,
                  stride=(1, 1), padding=(1, 1)),
        LayerSpec(kind="relu", name="relu2"),
        LayerSpec(kind="avgpool2d", name="gap", kernel=(2, 2), stride=(2, 2)),
        LayerSpec(kind="flatten", name="flatten"),
    ]
    feat = c2 * (h // 4) * (w // 4)
    layers.append(LayerSpec(
        kind="linear", name="fc",
        weights=rng.standard_normal((classes, feat)).astype(np.float32) * 0.2,
        bias=rng.standard_normal(classes).astype(np.float32) * 0.1))
    return ModelGraph(layers=layers, input_shape=in_shape, class_count=classes,
                      mean=np.full(c, 0.4, dtype=np.float32),
                      std=np.full(c, 0.25, dtype=np.float32))
