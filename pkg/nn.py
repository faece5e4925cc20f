"""
Recurrent Networks - Elman RNN, LSTM and bidirectional LSTM stacks
Forward passes record a tape; backward passes replay it in reverse
(backpropagation through time) to produce exact parameter gradients
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union, Any

import numpy as np

from domain_models import ModelKind, ParameterError, ShapeError, ConsistencyError
from ndcore import Matrix, Vector, Rng, matvec, sigmoid, tanh_v, rng_uniform

logger = logging.getLogger(__name__)

LSTM_GATES = ('i', 'f', 'c', 'o')
LSTM_TENSORS = ('w_i', 'w_f', 'w_c', 'w_o', 'b_i', 'b_f', 'b_c', 'b_o')
RNN_TENSORS = ('w', 'b')

CHECKPOINT_MAGIC = "VARIANTCAST-CKPT/1"

# Parameter name -> gradient buffer, same order as StackedNet.named_parameters()
GradientSet = Dict[str, np.ndarray]

# =============================================================================
# PARAMETERS
# =============================================================================

def _check_cell_shapes(weights: List[np.ndarray], biases: List[np.ndarray]) -> None:
    shape = weights[0].shape
    if len(shape) != 2:
        raise ShapeError(f"Cell weights must be 2-D, got {shape}")
    hidden, cols = shape
    if hidden < 1 or cols <= hidden:
        raise ShapeError(f"Cell weights {shape} need hidden >= 1 and input >= 1")
    for w in weights:
        if w.shape != shape:
            raise ShapeError(f"Cell weight shapes differ: {shape} vs {w.shape}")
    for b in biases:
        if b.shape != (hidden,):
            raise ShapeError(f"Cell bias shape {b.shape} does not match hidden {hidden}")


@dataclass
class LstmCellParams:
    """Gate weights over [h_prev, x] and gate biases"""
    w_i: Matrix
    w_f: Matrix
    w_c: Matrix
    w_o: Matrix
    b_i: Vector
    b_f: Vector
    b_c: Vector
    b_o: Vector

    def __post_init__(self):
        _check_cell_shapes([self.w_i, self.w_f, self.w_c, self.w_o],
                           [self.b_i, self.b_f, self.b_c, self.b_o])

    @property
    def hidden(self) -> int:
        return self.w_i.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_i.shape[1] - self.hidden

    def tensors(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in LSTM_TENSORS]


@dataclass
class LstmState:
    h: Vector
    c: Vector

    def __post_init__(self):
        if self.h.shape != self.c.shape:
            raise ShapeError(f"Hidden state {self.h.shape} and cell state {self.c.shape} differ")


@dataclass
class RnnCellParams:
    """Elman cell: h_new = tanh(w [h, x] + b)"""
    w: Matrix
    b: Vector

    def __post_init__(self):
        _check_cell_shapes([self.w], [self.b])

    @property
    def hidden(self) -> int:
        return self.w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1] - self.hidden

    def tensors(self) -> List[Tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in RNN_TENSORS]


CellParams = Union[LstmCellParams, RnnCellParams]


@dataclass
class RecurrentLayer:
    forward: CellParams
    backward: Optional[LstmCellParams] = None

    @property
    def output_dim(self) -> int:
        return self.forward.hidden * (2 if self.backward is not None else 1)


@dataclass
class StackedNet:
    """Stack of recurrent layers with an affine head on the last timestep"""
    kind: ModelKind
    input_dim: int
    output_dim: int
    hidden: int
    layer_count: int
    layers: List[RecurrentLayer]
    head_w: Matrix
    head_b: Vector

    def __post_init__(self):
        if len(self.layers) != self.layer_count:
            raise ShapeError(f"Expected {self.layer_count} layers, got {len(self.layers)}")
        expected_in = self.input_dim
        for l, layer in enumerate(self.layers):
            cell_type = RnnCellParams if self.kind == ModelKind.RNN else LstmCellParams
            if not isinstance(layer.forward, cell_type):
                raise ShapeError(f"Layer {l} cell does not match kind {self.kind.value}")
            if (self.kind == ModelKind.BILSTM) != (layer.backward is not None):
                raise ShapeError(f"Layer {l} direction count does not match kind {self.kind.value}")
            for cell in filter(None, (layer.forward, layer.backward)):
                if cell.hidden != self.hidden or cell.input_dim != expected_in:
                    raise ShapeError(
                        f"Layer {l} cell is {cell.hidden}x({cell.hidden}+{cell.input_dim}), "
                        f"expected {self.hidden}x({self.hidden}+{expected_in})")
            expected_in = layer.output_dim
        if self.head_w.shape != (self.output_dim, self.feature_dim):
            raise ShapeError(f"Head weight {self.head_w.shape} does not match "
                             f"({self.output_dim}, {self.feature_dim})")
        if self.head_b.shape != (self.output_dim,):
            raise ShapeError(f"Head bias {self.head_b.shape} does not match ({self.output_dim},)")

    @property
    def feature_dim(self) -> int:
        return self.hidden * (2 if self.kind == ModelKind.BILSTM else 1)

    def signature(self) -> Tuple[Any, ...]:
        return (self.kind, self.input_dim, self.output_dim, self.hidden, self.layer_count)

    def named_parameters(self) -> List[Tuple[str, np.ndarray]]:
        """Every parameter tensor in canonical order; arrays are the live storage"""
        named = []
        for l, layer in enumerate(self.layers):
            for direction, cell in (('forward', layer.forward), ('backward', layer.backward)):
                if cell is None:
                    continue
                for name, tensor in cell.tensors():
                    named.append((f"layers.{l}.{direction}.{name}", tensor))
        named.append(("head_w", self.head_w))
        named.append(("head_b", self.head_b))
        return named

    def param_count(self) -> int:
        return sum(t.size for _, t in self.named_parameters())

# =============================================================================
# CELL STEPS
# =============================================================================

def _lstm_step(p: LstmCellParams, h: np.ndarray, c: np.ndarray,
               x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, Dict[str, np.ndarray]]:
    z = np.concatenate([h, x], axis=-1)
    i = sigmoid(matvec(p.w_i, z) + p.b_i)
    f = sigmoid(matvec(p.w_f, z) + p.b_f)
    g = tanh_v(matvec(p.w_c, z) + p.b_c)
    o = sigmoid(matvec(p.w_o, z) + p.b_o)
    c_new = f * c + i * g
    tanh_c = tanh_v(c_new)
    h_new = o * tanh_c
    cache = {'z': z, 'i': i, 'f': f, 'g': g, 'o': o, 'c_prev': c, 'tanh_c': tanh_c}
    return h_new, c_new, cache


def _rnn_step(p: RnnCellParams, h: np.ndarray,
              x: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    z = np.concatenate([h, x], axis=-1)
    h_new = tanh_v(matvec(p.w, z) + p.b)
    return h_new, {'z': z, 'h': h_new}


def lstm_cell_step(p: LstmCellParams, s: LstmState, x: Vector) -> LstmState:
    """One LSTM step; the incoming state is left untouched"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise ShapeError(f"Input {x.shape} does not match cell input ({p.input_dim},)")
    if s.h.shape != (p.hidden,):
        raise ShapeError(f"State {s.h.shape} does not match cell hidden ({p.hidden},)")
    h, c, _ = _lstm_step(p, s.h, s.c, x)
    return LstmState(h=h, c=c)


def rnn_cell_step(p: RnnCellParams, h: Vector, x: Vector) -> Vector:
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise ShapeError(f"Input {x.shape} does not match cell input ({p.input_dim},)")
    if h.shape != (p.hidden,):
        raise ShapeError(f"State {h.shape} does not match cell hidden ({p.hidden},)")
    h_new, _ = _rnn_step(p, h, x)
    return h_new

# =============================================================================
# TAPE
# =============================================================================

@dataclass
class DirectionTape:
    """Per-step caches of one direction, in the order the steps ran"""
    reverse: bool
    steps: List[Dict[str, np.ndarray]]
    outputs: np.ndarray  # (T, B, hidden), run order


@dataclass
class LayerTape:
    input_dim: int
    forward: DirectionTape
    backward: Optional[DirectionTape] = None


@dataclass
class SequenceTape:
    signature: Tuple[Any, ...]
    batched: bool
    batch: int
    steps: int
    layers: List[LayerTape] = field(default_factory=list)
    features: Optional[np.ndarray] = None  # (B, feature_dim) at the last timestep


def _run_direction(p: CellParams, xs: np.ndarray, reverse: bool) -> Tuple[np.ndarray, DirectionTape]:
    """Run one cell over xs (T, B, D); returns time-aligned outputs (T, B, H)"""
    steps_count, batch, _ = xs.shape
    seq = xs[::-1] if reverse else xs
    h = np.zeros((batch, p.hidden))
    c = np.zeros((batch, p.hidden))
    outputs = np.empty((steps_count, batch, p.hidden))
    caches = []
    for t in range(steps_count):
        if isinstance(p, LstmCellParams):
            h, c, cache = _lstm_step(p, h, c, seq[t])
        else:
            h, cache = _rnn_step(p, h, seq[t])
        caches.append(cache)
        outputs[t] = h
    aligned = outputs[::-1] if reverse else outputs
    return aligned, DirectionTape(reverse=reverse, steps=caches, outputs=outputs)


def _backprop_direction(p: CellParams, tape: DirectionTape,
                        d_aligned: np.ndarray) -> Tuple[np.ndarray, Dict[str, np.ndarray]]:
    """Reverse pass of one direction; returns time-aligned input gradients and tensor gradients"""
    d_run = d_aligned[::-1] if tape.reverse else d_aligned
    steps_count, batch, hidden = d_run.shape
    grads = {name: np.zeros_like(t) for name, t in p.tensors()}
    dx_run = np.empty((steps_count, batch, p.input_dim))
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))

    for t in reversed(range(steps_count)):
        cache = tape.steps[t]
        z = cache['z']
        dh = d_run[t] + dh_next
        if isinstance(p, LstmCellParams):
            i, f, g, o = cache['i'], cache['f'], cache['g'], cache['o']
            tanh_c = cache['tanh_c']
            dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
            pre = {
                'i': dc * g * i * (1.0 - i),
                'f': dc * cache['c_prev'] * f * (1.0 - f),
                'c': dc * i * (1.0 - g * g),
                'o': dh * tanh_c * o * (1.0 - o),
            }
            dc_next = dc * f
            dz = np.zeros_like(z)
            for gate in LSTM_GATES:
                da = pre[gate]
                grads['w_' + gate] += da.T @ z
                grads['b_' + gate] += da.sum(axis=0)
                dz += da @ getattr(p, 'w_' + gate)
        else:
            h = cache['h']
            da = dh * (1.0 - h * h)
            grads['w'] += da.T @ z
            grads['b'] += da.sum(axis=0)
            dz = da @ p.w
        dh_next = dz[:, :hidden]
        dx_run[t] = dz[:, hidden:]

    dx = dx_run[::-1] if tape.reverse else dx_run
    return dx, grads

# =============================================================================
# SEQUENCE PASSES
# =============================================================================

def forward_sequence(net: StackedNet, xs) -> Tuple[np.ndarray, SequenceTape]:
    """
    Run the net over a sequence and predict from the last timestep.

    xs is either one sequence (T, input_dim) -> prediction (output_dim,)
    or a batch of equal-length sequences (B, T, input_dim) -> (B, output_dim).
    Parameters are not modified.
    """
    arr = np.asarray(xs, dtype=np.float64)
    if arr.size == 0:
        raise ParameterError("Input sequence is empty")
    if arr.ndim == 2:
        batched = False
        arr = arr[None]
    elif arr.ndim == 3:
        batched = True
    else:
        raise ShapeError(f"Input must be (T, D) or (B, T, D), got {arr.shape}")
    if arr.shape[2] != net.input_dim:
        raise ShapeError(f"Input feature size {arr.shape[2]} does not match net input {net.input_dim}")

    seq = arr.transpose(1, 0, 2)
    tape = SequenceTape(signature=net.signature(), batched=batched,
                        batch=arr.shape[0], steps=arr.shape[1])
    layer_in = seq
    for layer in net.layers:
        out_f, tape_f = _run_direction(layer.forward, layer_in, reverse=False)
        tape_b = None
        if layer.backward is not None:
            out_b, tape_b = _run_direction(layer.backward, layer_in, reverse=True)
            out = np.concatenate([out_f, out_b], axis=2)
        else:
            out = out_f
        tape.layers.append(LayerTape(input_dim=layer_in.shape[2], forward=tape_f, backward=tape_b))
        layer_in = out

    tape.features = layer_in[-1]
    prediction = matvec(net.head_w, tape.features) + net.head_b
    return (prediction if batched else prediction[0]), tape


def backward_sequence(net: StackedNet, tape: SequenceTape, loss_grad) -> GradientSet:
    """Gradients of the scalar loss given d(loss)/d(prediction)"""
    if tape.signature != net.signature() or len(tape.layers) != net.layer_count:
        raise ConsistencyError(f"Tape recorded for {tape.signature}, net is {net.signature()}")
    g = np.asarray(loss_grad, dtype=np.float64)
    if not tape.batched:
        g = g[None]
    if g.shape != (tape.batch, net.output_dim):
        raise ShapeError(f"Loss gradient shape {np.shape(loss_grad)} does not match prediction")

    grads: Dict[str, np.ndarray] = {
        "head_w": g.T @ tape.features,
        "head_b": g.sum(axis=0),
    }
    d_out = np.zeros((tape.steps, tape.batch, net.feature_dim))
    d_out[-1] = g @ net.head_w

    for l in reversed(range(net.layer_count)):
        layer, layer_tape = net.layers[l], tape.layers[l]
        if layer.backward is not None:
            dx_f, g_f = _backprop_direction(layer.forward, layer_tape.forward, d_out[..., :net.hidden])
            dx_b, g_b = _backprop_direction(layer.backward, layer_tape.backward, d_out[..., net.hidden:])
            d_in = dx_f + dx_b
            grads.update({f"layers.{l}.backward.{k}": v for k, v in g_b.items()})
        else:
            d_in, g_f = _backprop_direction(layer.forward, layer_tape.forward, d_out)
        grads.update({f"layers.{l}.forward.{k}": v for k, v in g_f.items()})
        d_out = d_in

    return {name: grads[name] for name, _ in net.named_parameters()}

# =============================================================================
# FACTORIES
# =============================================================================

def _lstm_cell(rng: Rng, hidden: int, input_dim: int, bound: float) -> LstmCellParams:
    cols = hidden + input_dim
    weights = {f"w_{gate}": rng_uniform(rng, -bound, bound, hidden * cols).reshape(hidden, cols)
               for gate in LSTM_GATES}
    biases = {f"b_{gate}": np.zeros(hidden) for gate in LSTM_GATES}
    return LstmCellParams(**weights, **biases)


def init_net(kind: ModelKind, input_dim: int, output_dim: int, hidden: int,
             layer_count: int, rng: Rng) -> StackedNet:
    """Weights uniform in [-1/sqrt(hidden), 1/sqrt(hidden)), biases zero"""
    for name, value in (('input_dim', input_dim), ('output_dim', output_dim),
                        ('hidden', hidden), ('layer_count', layer_count)):
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")

    bound = 1.0 / np.sqrt(hidden)
    layers = []
    in_dim = input_dim
    for _ in range(layer_count):
        if kind == ModelKind.RNN:
            cols = hidden + in_dim
            forward = RnnCellParams(
                w=rng_uniform(rng, -bound, bound, hidden * cols).reshape(hidden, cols),
                b=np.zeros(hidden))
        else:
            forward = _lstm_cell(rng, hidden, in_dim, bound)
        backward = _lstm_cell(rng, hidden, in_dim, bound) if kind == ModelKind.BILSTM else None
        layer = RecurrentLayer(forward=forward, backward=backward)
        layers.append(layer)
        in_dim = layer.output_dim

    head_w = rng_uniform(rng, -bound, bound, output_dim * in_dim).reshape(output_dim, in_dim)
    return StackedNet(kind=kind, input_dim=input_dim, output_dim=output_dim, hidden=hidden,
                      layer_count=layer_count, layers=layers, head_w=head_w,
                      head_b=np.zeros(output_dim))

# =============================================================================
# CHECKPOINTS
# =============================================================================

def save_checkpoint(path: str, net: StackedNet, metadata: Optional[Dict[str, Any]] = None,
                    extras: Optional[Dict[str, np.ndarray]] = None) -> str:
    """
    Write the net to an .npz container.

    Members: 'magic' (format tag), 'header' (JSON with kind, dims and
    caller metadata), 'param/<name>' for every tensor and 'extra/<name>'
    for caller arrays. The file is written to a temporary sibling and
    renamed into place.
    """
    header = {
        'kind': net.kind.value,
        'input_dim': net.input_dim,
        'output_dim': net.output_dim,
        'hidden': net.hidden,
        'layer_count': net.layer_count,
        'metadata': metadata or {},
    }
    arrays = {'magic': np.array(CHECKPOINT_MAGIC), 'header': np.array(json.dumps(header, sort_keys=True))}
    for name, tensor in net.named_parameters():
        arrays[f"param/{name}"] = tensor
    for name, tensor in (extras or {}).items():
        arrays[f"extra/{name}"] = np.asarray(tensor)

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as fh:
            np.savez(fh, **arrays)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    logger.debug(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path: str) -> Tuple[StackedNet, Dict[str, Any], Dict[str, np.ndarray]]:
    """Read a checkpoint written by save_checkpoint"""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise ConsistencyError(f"Cannot read checkpoint {path}: {e}") from e
    with data:
        if 'magic' not in data.files or str(data['magic']) != CHECKPOINT_MAGIC:
            raise ConsistencyError(f"{path} is not a {CHECKPOINT_MAGIC} checkpoint")
        header = json.loads(str(data['header']))
        net = init_net(ModelKind.parse(header['kind']), header['input_dim'], header['output_dim'],
                       header['hidden'], header['layer_count'], Rng(0))
        for name, tensor in net.named_parameters():
            key = f"param/{name}"
            if key not in data.files:
                raise ConsistencyError(f"Checkpoint {path} is missing tensor {name}")
            stored = data[key]
            if stored.shape != tensor.shape:
                raise ConsistencyError(f"Tensor {name} has shape {stored.shape}, expected {tensor.shape}")
            tensor[...] = stored
        extras = {key[len("extra/"):]: data[key] for key in data.files if key.startswith("extra/")}
    return net, header.get('metadata', {}), extras
