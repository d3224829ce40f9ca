"""Model graph, the two architectures, and the eight-variant registry.

A Model is an ordered list of named layer nodes; each node lists the indices
of the nodes it consumes (-1 is the model input). Sequential networks are the
trivial case; the residual adds of ResNet50 use two-input nodes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import tensor as T
from .errors import ConfigError, ShapeError

# Fixed alphabetical class order; shared by manifests, outputs, and reports.
CLASS_NAMES = (
    "Female Adult",
    "Female Child",
    "Female Teenager",
    "Male Adult",
    "Male Child",
    "Male Teenager",
)
NUM_CLASSES = len(CLASS_NAMES)
INPUT_SPEC = (99, 99, 3)


@dataclass(frozen=True)
class ParamLedgerEntry:
    index: int
    name: str
    kind: str
    trainable: int
    non_trainable: int


@dataclass(frozen=True)
class ModelConfig:
    model_id: int
    architecture: str          # "resnet50" | "custom"
    pooling: str               # "GAP" | "MP"
    optimizer: str             # "adam" | "sgd_momentum"
    lr_initial: float
    lr_finetune: float | None  # None for custom CNN
    pretrained: str | None = None


_REGISTRY = {
    1: ModelConfig(1, "resnet50", "GAP", "adam", 0.0001, 0.00001),
    2: ModelConfig(2, "resnet50", "MP", "adam", 0.0001, 0.00001),
    3: ModelConfig(3, "resnet50", "GAP", "sgd_momentum", 0.01, 0.001),
    4: ModelConfig(4, "resnet50", "MP", "sgd_momentum", 0.01, 0.001),
    5: ModelConfig(5, "custom", "GAP", "adam", 0.00001, None),
    6: ModelConfig(6, "custom", "MP", "adam", 0.00001, None),
    7: ModelConfig(7, "custom", "GAP", "sgd_momentum", 0.001, None),
    8: ModelConfig(8, "custom", "MP", "sgd_momentum", 0.001, None),
}


def registry_lookup(model_id: int) -> ModelConfig:
    if model_id not in _REGISTRY:
        raise ConfigError(f"model id must be 1..8, got {model_id}")
    return _REGISTRY[model_id]


def _layer_seed(root_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([root_seed, index]).generate_state(1)[0])


@dataclass
class _Node:
    name: str
    layer: L.Layer
    inputs: list[int]


class Model:
    def __init__(self, architecture: str, pooling: str):
        self.architecture = architecture
        self.pooling = pooling
        self.class_names = CLASS_NAMES
        self.input_spec = INPUT_SPEC
        self.nodes: list[_Node] = []
        self.backbone_len = 0  # leading node count forming the frozen backbone

    # -- construction -----------------------------------------------------

    def add(self, name: str, layer: L.Layer, inputs=None) -> int:
        if inputs is None:
            inputs = [len(self.nodes) - 1]
        self.nodes.append(_Node(name, layer, list(inputs)))
        return len(self.nodes) - 1

    # -- execution --------------------------------------------------------

    def forward(self, x, train=False, rng=None):
        if x.shape[1:] != self.input_spec:
            raise ShapeError(f"expected input (N,{self.input_spec}), got {x.shape}")
        outs = []
        for node in self.nodes:
            args = [x if i == -1 else outs[i] for i in node.inputs]
            y = node.layer.forward(*args, train=train, rng=rng)
            T.check_finite(y, node.name)
            outs.append(y)
        return outs[-1]

    def backward(self, upstream, at_logits=False):
        """Backpropagate; at_logits injects the gradient below the softmax."""
        grads = [None] * len(self.nodes)
        if at_logits:
            last = self.nodes[-1]
            if last.layer.kind != "softmax":
                raise ShapeError("at_logits requires a softmax output layer")
            grads[last.inputs[0]] = upstream
        else:
            grads[-1] = upstream
        input_grad = None
        for idx in range(len(self.nodes) - 1, -1, -1):
            g = grads[idx]
            if g is None:
                continue
            node = self.nodes[idx]
            down = node.layer.backward(g)
            if not isinstance(down, tuple):
                down = (down,)
            for i, gi in zip(node.inputs, down):
                if i == -1:
                    input_grad = gi if input_grad is None else input_grad + gi
                else:
                    grads[i] = gi if grads[i] is None else grads[i] + gi
        return input_grad

    # -- parameters -------------------------------------------------------

    def zero_grads(self):
        for node in self.nodes:
            node.layer.zero_grads()

    def named_params(self, trainable_only=False):
        """Yield (qualified name, layer, param name) in topological order."""
        for node in self.nodes:
            if trainable_only and not node.layer.trainable:
                continue
            for pname in node.layer.params:
                yield f"{node.name}.{pname}", node.layer, pname

    def named_state(self):
        for node in self.nodes:
            for sname in node.layer.state:
                yield f"{node.name}.{sname}", node.layer, sname

    def summary(self):
        ledger = []
        for i, node in enumerate(self.nodes):
            tr, ntr = node.layer.param_count()
            ledger.append(ParamLedgerEntry(i, node.name, node.layer.kind, tr, ntr))
        total = sum(e.trainable + e.non_trainable for e in ledger)
        trainable = sum(e.trainable for e in ledger)
        return ledger, total, trainable

    def astype(self, dtype):
        for node in self.nodes:
            node.layer.astype(dtype)
        return self


def _head(model: Model, seed: int, channels: int, spatial: int, start: int):
    """Pooling head + dense-512 + dropout + dense-6 + softmax."""
    if model.pooling == "GAP":
        model.add("head_gap", L.GlobalAvgPool())
        width = channels
    else:
        model.add("head_maxpool", L.MaxPool2D(2, 2, T.VALID_FLOOR))
        model.add("head_flatten", L.Flatten())
        width = (spatial // 2) ** 2 * channels
    model.add("head_dense1",
              L.Dense(512, width, seed=_layer_seed(seed, start)))
    model.add("head_relu", L.ReLU())
    model.add("head_dropout", L.Dropout(0.3))
    model.add("head_dense2",
              L.Dense(NUM_CLASSES, 512, seed=_layer_seed(seed, start + 1)))
    model.add("head_softmax", L.Softmax())


def build_custom_cnn(pooling: str, seed: int = 0,
                     dtype=T.DEFAULT_DTYPE) -> Model:
    """Four conv blocks (32/64/128/256) then the pooling-specific head."""
    if pooling not in ("GAP", "MP"):
        raise ConfigError(f"pooling must be GAP or MP, got {pooling!r}")
    m = Model("custom", pooling)
    in_ch = 3
    for b, filters in enumerate((32, 64, 128, 256), start=1):
        m.add(f"block{b}_conv", L.Conv2D(filters, 3, in_ch, stride=1,
                                         padding=T.SAME_PRESERVING,
                                         seed=_layer_seed(seed, b),
                                         dtype=dtype))
        m.add(f"block{b}_bn", L.BatchNorm(filters, dtype=dtype))
        m.add(f"block{b}_relu", L.ReLU())
        m.add(f"block{b}_pool", L.MaxPool2D(2, 2, T.VALID_FLOOR))
        in_ch = filters
    # spatial chain 99 -> 49 -> 24 -> 12 -> 6
    _head(m, seed, channels=256, spatial=6, start=100)
    if dtype is not T.DEFAULT_DTYPE:
        m.astype(dtype)
    return m


def _bottleneck(m: Model, name: str, in_idx: int, width: int, stride: int,
                project: bool, seed: int, sidx: int, dtype) -> int:
    """Post-activation bottleneck: 1x1/s -> 3x3 -> 1x1 (x4), optional
    projection shortcut, elementwise add, relu. Returns the output node."""
    in_ch = 0
    # input channel count is recoverable from the producing layer
    prev = m.nodes[in_idx].layer
    in_ch = getattr(prev, "filters", None) or getattr(prev, "channels", None)
    if in_ch is None:  # relu/add carry no channel info; walk back
        j = in_idx
        while in_ch is None:
            j -= 1
            lyr = m.nodes[j].layer
            in_ch = getattr(lyr, "filters", None) or getattr(lyr, "channels", None)
    out_ch = width * 4
    a = m.add(f"{name}_conv1", L.Conv2D(width, 1, in_ch, stride=stride,
                                        padding=T.SAME_CEIL,
                                        seed=_layer_seed(seed, sidx),
                                        dtype=dtype), [in_idx])
    a = m.add(f"{name}_bn1", L.BatchNorm(width, dtype=dtype), [a])
    a = m.add(f"{name}_relu1", L.ReLU(), [a])
    a = m.add(f"{name}_conv2", L.Conv2D(width, 3, width, stride=1,
                                        padding=T.SAME_PRESERVING,
                                        seed=_layer_seed(seed, sidx + 1),
                                        dtype=dtype), [a])
    a = m.add(f"{name}_bn2", L.BatchNorm(width, dtype=dtype), [a])
    a = m.add(f"{name}_relu2", L.ReLU(), [a])
    a = m.add(f"{name}_conv3", L.Conv2D(out_ch, 1, width, stride=1,
                                        padding=T.SAME_CEIL,
                                        seed=_layer_seed(seed, sidx + 2),
                                        dtype=dtype), [a])
    a = m.add(f"{name}_bn3", L.BatchNorm(out_ch, dtype=dtype), [a])
    if project:
        s = m.add(f"{name}_proj_conv", L.Conv2D(out_ch, 1, in_ch, stride=stride,
                                                padding=T.SAME_CEIL,
                                                seed=_layer_seed(seed, sidx + 3),
                                                dtype=dtype), [in_idx])
        s = m.add(f"{name}_proj_bn", L.BatchNorm(out_ch, dtype=dtype), [s])
    else:
        s = in_idx
    a = m.add(f"{name}_add", L.Add(), [a, s])
    return m.add(f"{name}_relu_out", L.ReLU(), [a])


def build_resnet50(pooling: str, weights: str | None = None, seed: int = 0,
                   dtype=T.DEFAULT_DTYPE) -> Model:
    """50-layer residual backbone (stages 3/4/6/3, widths 64/128/256/512 x4)
    plus the classification head; backbone starts frozen."""
    if pooling not in ("GAP", "MP"):
        raise ConfigError(f"pooling must be GAP or MP, got {pooling!r}")
    m = Model("resnet50", pooling)
    m.add("stem_conv", L.Conv2D(64, 7, 3, stride=2, padding=T.SAME_CEIL,
                                seed=_layer_seed(seed, 0), dtype=dtype))
    m.add("stem_bn", L.BatchNorm(64, dtype=dtype))
    m.add("stem_relu", L.ReLU())
    last = m.add("stem_pool", L.MaxPool2D(3, 2, T.SAME_CEIL))
    sidx = 10
    stages = ((2, 3, 64, 1), (3, 4, 128, 2), (4, 6, 256, 2), (5, 3, 512, 2))
    for stage, blocks, width, stride in stages:
        for b in range(1, blocks + 1):
            last = _bottleneck(m, f"stage{stage}_block{b}", last, width,
                               stride if b == 1 else 1, project=(b == 1),
                               seed=seed, sidx=sidx, dtype=dtype)
            sidx += 4
    m.backbone_len = len(m.nodes)
    for node in m.nodes:
        L.set_trainable(node.layer, False)
    # spatial chain 99 -> 50 -> 25 -> 25 -> 13 -> 7 -> 4
    _head(m, seed, channels=2048, spatial=4, start=500)
    if dtype is not T.DEFAULT_DTYPE:
        m.astype(dtype)
    if weights is not None:
        from .checkpoint import load_backbone_weights
        load_backbone_weights(m, weights)
    return m


def build_model(config: ModelConfig, seed: int = 0, dtype=T.DEFAULT_DTYPE) -> Model:
    if config.architecture == "custom":
        return build_custom_cnn(config.pooling, seed=seed, dtype=dtype)
    if config.architecture == "resnet50":
        return build_resnet50(config.pooling, weights=config.pretrained,
                              seed=seed, dtype=dtype)
    raise ConfigError(f"unknown architecture {config.architecture!r}")
