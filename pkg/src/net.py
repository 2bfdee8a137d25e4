"""
Wide-and-Deep-Netz für die Prognose von Biomarker-Änderungen.

Aufbau:
    Deep:  LSTM(9 → H) → LSTM(H → H) → Projektion H → 1 pro Zeitschritt
           → Dense(N → 100, Sigmoid) → Dense(100 → 50, Sigmoid) → Linear(50 → 1)
    Wide:  affine Abbildung der 8 tabellarischen Merkmale (optional mit Sigmoid)
    Summe: ŷ = deep + wide

Alle Rechnungen laufen in float64. Die Gradienten werden analytisch per
Backpropagation Through Time berechnet; ``gradient_check`` vergleicht sie mit
zentralen finiten Differenzen.

Parameterreihenfolge (verbindlich für Optimierer, Checkpoint, ``to_vector``):

    lstm1.weights  [4H × (I+H)]   Gate-Blöcke in der Reihenfolge input, forget, output, candidate
    lstm1.bias     [4H]
    lstm2.weights  [4H × 2H]
    lstm2.bias     [4H]
    head.proj_weights [H], head.proj_bias [1]
    head.dense1_weights [100 × N], head.dense1_bias [100]
    head.dense2_weights [50 × 100], head.dense2_bias [50]
    head.out_weights [50], head.out_bias [1]
    wide.weights [8], wide.bias [1]

Fehlt ein Zweig (reine Wide- oder reine Deep-Experimente), entfallen dessen Einträge.
Alle Matrizen werden zeilenweise (C-Reihenfolge) abgelegt.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np
from scipy.special import expit
from sklearn.preprocessing import StandardScaler

from src.errors import LengthMismatchError, PipelineRuntimeError, ValidationError
from src.ingest import TABULAR_FIELDS

logger = logging.getLogger(__name__)

DENSE1_WIDTH = 100
DENSE2_WIDTH = 50
N_TABULAR = len(TABULAR_FIELDS)
N_LSTM_LAYERS = 2
FORGET_BIAS_INIT = 1.0


class DimensionMismatchError(ValidationError):
    pass


class StaleTapeError(PipelineRuntimeError):
    pass


# =================================================================
# PARAMETER-CONTAINER
# =================================================================

@dataclass
class NetConfig:
    """
    Dimensionen und Zweige des Netzes.

    ``wide_sigmoid`` quetscht den Wide-Score durch σ. Ein Nullmodell liefert dann
    σ(0) = 0.5 aus dem Wide-Zweig statt 0; exakt 0 gilt nur für den affinen Zweig
    oder ohne Wide-Zweig.
    """

    input_dim: int = 9
    hidden_dim: int = 64
    seq_len: int = 1445
    use_deep: bool = True
    use_wide: bool = True
    wide_sigmoid: bool = False

    def __post_init__(self):
        if not (self.use_deep or self.use_wide):
            raise ValidationError("Mindestens ein Zweig (deep oder wide) muss aktiv sein")
        if self.use_deep and min(self.input_dim, self.hidden_dim, self.seq_len) < 1:
            raise ValidationError("input_dim, hidden_dim und seq_len müssen positiv sein")


@dataclass(eq=False)
class LstmLayerParams:
    input_dim: int
    hidden_dim: int
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        h, i = self.hidden_dim, self.input_dim
        if self.weights.shape != (4 * h, i + h) or self.bias.shape != (4 * h,):
            raise DimensionMismatchError(
                f"LSTM-Schicht erwartet Gewichte {(4 * h, i + h)} und Bias {(4 * h,)}, "
                f"erhalten {self.weights.shape} / {self.bias.shape}"
            )

    @property
    def input_weights(self):
        return self.weights[:, :self.input_dim]

    @property
    def recurrent_weights(self):
        return self.weights[:, self.input_dim:]

    def named_arrays(self, prefix):
        return [(f"{prefix}.weights", self.weights), (f"{prefix}.bias", self.bias)]


@dataclass(eq=False)
class DeepHeadParams:
    seq_len: int
    proj_weights: np.ndarray
    proj_bias: np.ndarray
    dense1_weights: np.ndarray
    dense1_bias: np.ndarray
    dense2_weights: np.ndarray
    dense2_bias: np.ndarray
    out_weights: np.ndarray
    out_bias: np.ndarray

    def __post_init__(self):
        if self.dense1_weights.shape != (DENSE1_WIDTH, self.seq_len):
            raise DimensionMismatchError(f"dense1 erwartet {(DENSE1_WIDTH, self.seq_len)}")
        if self.dense2_weights.shape != (DENSE2_WIDTH, DENSE1_WIDTH):
            raise DimensionMismatchError(f"dense2 erwartet {(DENSE2_WIDTH, DENSE1_WIDTH)}")
        if self.out_weights.shape != (DENSE2_WIDTH,):
            raise DimensionMismatchError(f"Ausgabeschicht erwartet {(DENSE2_WIDTH,)}")

    def named_arrays(self):
        return [
            ("head.proj_weights", self.proj_weights),
            ("head.proj_bias", self.proj_bias),
            ("head.dense1_weights", self.dense1_weights),
            ("head.dense1_bias", self.dense1_bias),
            ("head.dense2_weights", self.dense2_weights),
            ("head.dense2_bias", self.dense2_bias),
            ("head.out_weights", self.out_weights),
            ("head.out_bias", self.out_bias),
        ]


@dataclass(eq=False)
class WideParams:
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.shape != (N_TABULAR,) or self.bias.shape != (1,):
            raise DimensionMismatchError(f"Wide-Zweig erwartet genau {N_TABULAR} Gewichte und einen Bias")

    def named_arrays(self):
        return [("wide.weights", self.weights), ("wide.bias", self.bias)]


@dataclass(eq=False)
class FeatureNormalizers:
    """z-Score-Statistiken (Mittelwert, Standardabweichung) der Sequenz- und Tabellenmerkmale."""

    seq_mean: np.ndarray
    seq_std: np.ndarray
    tab_mean: np.ndarray
    tab_std: np.ndarray

    def __post_init__(self):
        for name in ("seq_std", "tab_std"):
            values = getattr(self, name)
            if values.size and (not np.all(np.isfinite(values)) or np.any(values <= 0)):
                raise ValidationError(f"Normalisierer '{name}' muss endlich und > 0 sein")

    @classmethod
    def identity(cls, seq_width, tab_width):
        return cls(np.zeros(seq_width), np.ones(seq_width), np.zeros(tab_width), np.ones(tab_width))

    @classmethod
    def fit(cls, sequences=None, features=None, seq_width=0, tab_width=0):
        """
        Schätzt die Normalisierer ausschließlich aus den übergebenen (Trainings-)Daten.

        Konstante Merkmale erhalten von ``StandardScaler`` die Skala 1.0.
        """
        if sequences:
            scaler = StandardScaler().fit(np.vstack(sequences))
            seq_mean, seq_std = scaler.mean_.copy(), scaler.scale_.copy()
        else:
            seq_mean, seq_std = np.zeros(seq_width), np.ones(seq_width)
        if features is not None and len(features):
            scaler = StandardScaler().fit(np.vstack(features))
            tab_mean, tab_std = scaler.mean_.copy(), scaler.scale_.copy()
        else:
            tab_mean, tab_std = np.zeros(tab_width), np.ones(tab_width)
        return cls(seq_mean, seq_std, tab_mean, tab_std)

    def normalize_sequence(self, sequence):
        return (np.asarray(sequence, dtype=np.float64) - self.seq_mean) / self.seq_std

    def normalize_features(self, features):
        return (np.asarray(features, dtype=np.float64) - self.tab_mean) / self.tab_std

    def named_arrays(self):
        return [
            ("norm.seq_mean", self.seq_mean),
            ("norm.seq_std", self.seq_std),
            ("norm.tab_mean", self.tab_mean),
            ("norm.tab_std", self.tab_std),
        ]


@dataclass(eq=False)
class ModelParams:
    """
    Sämtliche Gewichte des Wide-and-Deep-Netzes samt Normalisierern.

    ``revision`` wird bei jeder In-place-Änderung (Optimiererschritt) erhöht;
    ein Tape aus einer älteren Revision wird in ``model_backward`` abgewiesen.
    """

    config: NetConfig
    lstm_layers: List[LstmLayerParams]
    head: Optional[DeepHeadParams]
    wide: Optional[WideParams]
    normalizers: FeatureNormalizers
    revision: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.config.use_deep:
            if len(self.lstm_layers) != N_LSTM_LAYERS or self.head is None:
                raise DimensionMismatchError(f"Deep-Zweig benötigt genau {N_LSTM_LAYERS} LSTM-Schichten und einen Kopf")
            first, second = self.lstm_layers
            if first.input_dim != self.config.input_dim or second.input_dim != first.hidden_dim:
                raise DimensionMismatchError("LSTM-Schichten sind nicht verkettbar")
            if self.head.proj_weights.shape != (second.hidden_dim,):
                raise DimensionMismatchError("Projektion passt nicht zur Hidden-Breite")
        elif self.lstm_layers or self.head is not None:
            raise DimensionMismatchError("Deep-Parameter ohne aktiven Deep-Zweig")
        if self.config.use_wide != (self.wide is not None):
            raise DimensionMismatchError("Wide-Parameter passen nicht zur Konfiguration")

    def named_arrays(self):
        """Trainierbare Arrays (Referenzen, keine Kopien) in dokumentierter Reihenfolge."""
        named = []
        for k, layer in enumerate(self.lstm_layers, start=1):
            named += layer.named_arrays(f"lstm{k}")
        if self.head is not None:
            named += self.head.named_arrays()
        if self.wide is not None:
            named += self.wide.named_arrays()
        return named

    def arrays(self):
        return [array for _, array in self.named_arrays()]

    @property
    def size(self):
        return sum(array.size for array in self.arrays())

    def to_vector(self):
        return np.concatenate([array.ravel() for array in self.arrays()])

    def copy(self):
        return ModelParams(
            config=replace(self.config),
            lstm_layers=[
                LstmLayerParams(l.input_dim, l.hidden_dim, l.weights.copy(), l.bias.copy())
                for l in self.lstm_layers
            ],
            head=None if self.head is None else DeepHeadParams(
                self.head.seq_len, *(a.copy() for _, a in self.head.named_arrays())
            ),
            wide=None if self.wide is None else WideParams(self.wide.weights.copy(), self.wide.bias.copy()),
            normalizers=FeatureNormalizers(*(a.copy() for _, a in self.normalizers.named_arrays())),
        )

    def from_vector(self, vector):
        """Neue Parameterinstanz mit gleicher Struktur und den Werten aus ``vector``."""
        vector = np.asarray(vector, dtype=np.float64)
        if vector.size != self.size:
            raise DimensionMismatchError(f"Vektor hat {vector.size} Einträge, erwartet {self.size}")
        params = self.copy()
        offset = 0
        for array in params.arrays():
            array.reshape(-1)[:] = vector[offset:offset + array.size]
            offset += array.size
        return params

    def touch(self):
        self.revision += 1

    def normalize_sequence(self, sequence):
        return self.normalizers.normalize_sequence(sequence)

    def normalize_features(self, features):
        return self.normalizers.normalize_features(features)


@dataclass(eq=False)
class ParamGradients:
    """Gradienten in derselben Reihenfolge wie ``ModelParams.named_arrays``."""

    names: List[str]
    arrays: List[np.ndarray]

    def __getitem__(self, name):
        return self.arrays[self.names.index(name)]

    def to_vector(self):
        return np.concatenate([array.ravel() for array in self.arrays])


def init_params(config, rng, normalizers=None):
    """
    Initialisierung: Gewichte gleichverteilt in ±1/sqrt(fan_in), Forget-Bias 1.0,
    übrige Biases 0, Wide-Zweig vollständig 0.
    """
    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers, head, wide = [], None, None
    if config.use_deep:
        h = config.hidden_dim
        in_dim = config.input_dim
        for _ in range(N_LSTM_LAYERS):
            bias = np.zeros(4 * h)
            bias[h:2 * h] = FORGET_BIAS_INIT
            layers.append(LstmLayerParams(in_dim, h, uniform(in_dim + h, (4 * h, in_dim + h)), bias))
            in_dim = h
        n = config.seq_len
        head = DeepHeadParams(
            seq_len=n,
            proj_weights=uniform(h, (h,)),
            proj_bias=np.zeros(1),
            dense1_weights=uniform(n, (DENSE1_WIDTH, n)),
            dense1_bias=np.zeros(DENSE1_WIDTH),
            dense2_weights=uniform(DENSE1_WIDTH, (DENSE2_WIDTH, DENSE1_WIDTH)),
            dense2_bias=np.zeros(DENSE2_WIDTH),
            out_weights=uniform(DENSE2_WIDTH, (DENSE2_WIDTH,)),
            out_bias=np.zeros(1),
        )
    if config.use_wide:
        wide = WideParams(np.zeros(N_TABULAR), np.zeros(1))
    if normalizers is None:
        normalizers = FeatureNormalizers.identity(
            config.input_dim if config.use_deep else 0, N_TABULAR if config.use_wide else 0
        )
    return ModelParams(config, layers, head, wide, normalizers)


def zero_params(config):
    """Parametersatz, in dem jedes trainierbare Gewicht exakt 0 ist."""
    params = init_params(config, np.random.default_rng(0))
    for array in params.arrays():
        array[...] = 0.0
    return params


# =================================================================
# VORWÄRTSRECHNUNG
# =================================================================

def _activate(z, h):
    """Gate-Aktivierungen [i, f, o] per Sigmoid, Kandidat g per tanh."""
    act = np.empty_like(z)
    act[:3 * h] = expit(z[:3 * h])
    act[3 * h:] = np.tanh(z[3 * h:])
    return act


def lstm_cell_step(params, x, h_prev, c_prev):
    """
    Ein LSTM-Zeitschritt.

        i, f, o = σ(W·[x; h_prev] + b)   g = tanh(W·[x; h_prev] + b)
        c = f ⊙ c_prev + i ⊙ g          h = o ⊙ tanh(c)

    Returns:
        tuple: (h, c)
    """
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    c_prev = np.asarray(c_prev, dtype=np.float64)
    h = params.hidden_dim
    if x.shape != (params.input_dim,) or h_prev.shape != (h,) or c_prev.shape != (h,):
        raise DimensionMismatchError(
            f"Erwartet x {(params.input_dim,)}, h/c {(h,)}; erhalten {x.shape}, {h_prev.shape}, {c_prev.shape}"
        )
    z = params.weights @ np.concatenate([x, h_prev]) + params.bias
    act = _activate(z, h)
    c = act[h:2 * h] * c_prev + act[:h] * act[3 * h:]
    return act[2 * h:3 * h] * np.tanh(c), c


@dataclass(eq=False)
class _LayerCache:
    inputs: np.ndarray
    gates: np.ndarray
    cells: np.ndarray
    tanh_cells: np.ndarray
    hidden: np.ndarray


def _lstm_layer_forward(layer, inputs):
    n = inputs.shape[0]
    h = layer.hidden_dim
    # Eingabeanteil aller Zeitschritte in einem Matrixprodukt
    pre = inputs @ layer.input_weights.T + layer.bias
    w_rec = layer.recurrent_weights

    gates = np.empty((n, 4 * h))
    cells = np.empty((n, h))
    tanh_cells = np.empty((n, h))
    hidden = np.empty((n, h))
    h_t = np.zeros(h)
    c_t = np.zeros(h)
    for t in range(n):
        act = _activate(pre[t] + w_rec @ h_t, h)
        c_t = act[h:2 * h] * c_t + act[:h] * act[3 * h:]
        tc = np.tanh(c_t)
        h_t = act[2 * h:3 * h] * tc
        gates[t], cells[t], tanh_cells[t], hidden[t] = act, c_t, tc, h_t
    return hidden, _LayerCache(inputs, gates, cells, tanh_cells, hidden)


@dataclass(eq=False)
class _HeadCache:
    hidden: np.ndarray
    projections: np.ndarray
    dense1: np.ndarray
    dense2: np.ndarray


def _head_forward(head, hidden):
    projections = hidden @ head.proj_weights + head.proj_bias[0]
    a1 = expit(head.dense1_weights @ projections + head.dense1_bias)
    a2 = expit(head.dense2_weights @ a1 + head.dense2_bias)
    y = float(head.out_weights @ a2 + head.out_bias[0])
    return y, _HeadCache(hidden, projections, a1, a2)


@dataclass(eq=False)
class ForwardTape:
    """Zwischenergebnisse eines Vorwärtslaufs für ``model_backward``."""

    params: ModelParams
    revision: int
    layer_caches: List[_LayerCache] = field(default_factory=list)
    head_cache: Optional[_HeadCache] = None
    features: Optional[np.ndarray] = None
    wide_score: Optional[float] = None
    deep_output: float = 0.0
    wide_output: float = 0.0


def _check_sequence(params, seq):
    if params.head is None:
        raise ValidationError("Modell besitzt keinen Deep-Zweig")
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[0] != params.head.seq_len:
        raise LengthMismatchError(
            f"Sequenzlänge {seq.shape[0] if seq.ndim else 0} ≠ Kopfbreite N = {params.head.seq_len}"
        )
    if seq.shape[1] != params.config.input_dim:
        raise DimensionMismatchError(f"Sequenzbreite {seq.shape[1]} ≠ input_dim {params.config.input_dim}")
    return seq


def deep_forward(params, seq, collect_tape=False):
    """
    Deep-Zweig: zwei LSTM-Schichten, Projektion je Zeitschritt, Dense-Kopf.

    Args:
        params (ModelParams): Modellparameter mit Deep-Zweig.
        seq (np.ndarray): normalisierte Sequenz der Form (N, input_dim).
        collect_tape (bool): Zwischenergebnisse für die Rückwärtsrechnung sammeln.

    Returns:
        tuple: (Vorhersage als float, ForwardTape oder None)
    """
    seq = _check_sequence(params, seq)
    first, second = params.lstm_layers
    h1, cache1 = _lstm_layer_forward(first, seq)
    h2, cache2 = _lstm_layer_forward(second, h1)
    y, head_cache = _head_forward(params.head, h2)
    tape = None
    if collect_tape:
        tape = ForwardTape(params, params.revision, [cache1, cache2], head_cache, deep_output=y)
    return y, tape


def _wide_score(params, feats):
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape != (N_TABULAR,):
        raise DimensionMismatchError(f"Wide-Zweig erwartet {N_TABULAR} Merkmale, erhalten {feats.shape}")
    # sequentielle Akkumulation in Merkmalsreihenfolge
    return float(np.cumsum(params.weights * feats)[-1] + params.bias[0]), feats


def wide_forward(params, feats, sigmoid=False):
    """Affiner Score w·x + b über die 8 normalisierten Merkmale (optional σ-gequetscht)."""
    score, _ = _wide_score(params, feats)
    return float(expit(score)) if sigmoid else score


def _forward(params, seq, feats, collect_tape):
    tape = ForwardTape(params, params.revision) if collect_tape else None
    deep_out = wide_out = None
    if params.config.use_deep:
        deep_out, deep_tape = deep_forward(params, seq, collect_tape)
        if collect_tape:
            tape.layer_caches, tape.head_cache = deep_tape.layer_caches, deep_tape.head_cache
            tape.deep_output = deep_out
    if params.config.use_wide:
        score, feats = _wide_score(params.wide, feats)
        wide_out = float(expit(score)) if params.config.wide_sigmoid else score
        if collect_tape:
            tape.features, tape.wide_score, tape.wide_output = feats, score, wide_out
    return _combine(deep_out, wide_out), tape


def _combine(deep_out, wide_out):
    if deep_out is None:
        return wide_out
    if wide_out is None:
        return deep_out
    return deep_out + wide_out


def _output_from_hidden(params, hidden, feats):
    """Ausgabe ab den Zuständen der zweiten LSTM-Schicht: Kopf plus Wide-Zweig."""
    deep_out = wide_out = None
    if params.config.use_deep:
        deep_out, _ = _head_forward(params.head, hidden)
    if params.config.use_wide:
        score, _ = _wide_score(params.wide, feats)
        wide_out = float(expit(score)) if params.config.wide_sigmoid else score
    return _combine(deep_out, wide_out)


def model_forward(params, seq, feats):
    """Gesamtausgabe ŷ = deep_forward + wide_forward (fehlende Zweige entfallen)."""
    y, _ = _forward(params, seq, feats, collect_tape=False)
    return y


def forward_with_tape(params, seq, feats):
    """Wie ``model_forward``, liefert zusätzlich das Tape für ``model_backward``."""
    return _forward(params, seq, feats, collect_tape=True)


def predict(params, raw_sequence, raw_features):
    """Vorhersage aus unnormalisierten Eingaben (Normalisierer aus den Parametern)."""
    seq = params.normalize_sequence(raw_sequence) if params.config.use_deep else None
    feats = params.normalize_features(raw_features) if params.config.use_wide else None
    return model_forward(params, seq, feats)


# =================================================================
# RÜCKWÄRTSRECHNUNG (BPTT)
# =================================================================

def _lstm_layer_backward(layer, cache, d_hidden):
    """
    BPTT durch eine LSTM-Schicht.

    Args:
        d_hidden (np.ndarray): ∂L/∂h_t für alle t aus der darüberliegenden Schicht, Form (N, H).

    Returns:
        tuple: (∂L/∂W, ∂L/∂b, ∂L/∂inputs)
    """
    n, h = d_hidden.shape
    w_rec = layer.recurrent_weights
    gates, cells, tanh_cells = cache.gates, cache.cells, cache.tanh_cells

    d_pre = np.empty((n, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    for t in range(n - 1, -1, -1):
        i_g, f_g, o_g, g_g = gates[t, :h], gates[t, h:2 * h], gates[t, 2 * h:3 * h], gates[t, 3 * h:]
        tc = tanh_cells[t]
        dh = d_hidden[t] + dh_next
        dc = dc_next + dh * o_g * (1.0 - tc * tc)
        c_prev = cells[t - 1] if t > 0 else np.zeros(h)

        dz = d_pre[t]
        dz[:h] = dc * g_g * i_g * (1.0 - i_g)
        dz[h:2 * h] = dc * c_prev * f_g * (1.0 - f_g)
        dz[2 * h:3 * h] = dh * tc * o_g * (1.0 - o_g)
        dz[3 * h:] = dc * i_g * (1.0 - g_g * g_g)

        dc_next = dc * f_g
        dh_next = w_rec.T @ dz

    d_weights = np.empty_like(layer.weights)
    d_weights[:, :layer.input_dim] = d_pre.T @ cache.inputs
    d_weights[:, layer.input_dim:] = 0.0
    if n > 1:
        # h_{t-1} ist für t = 0 der Nullvektor
        d_weights[:, layer.input_dim:] = d_pre[1:].T @ cache.hidden[:-1]
    d_bias = d_pre.sum(axis=0)
    d_inputs = d_pre @ layer.input_weights
    return d_weights, d_bias, d_inputs


def _head_backward(head, cache, upstream):
    a1, a2 = cache.dense1, cache.dense2
    d_out_w = upstream * a2
    d_out_b = np.array([upstream])
    dz2 = (upstream * head.out_weights) * a2 * (1.0 - a2)
    d_dense2_w = np.outer(dz2, a1)
    dz1 = (head.dense2_weights.T @ dz2) * a1 * (1.0 - a1)
    d_dense1_w = np.outer(dz1, cache.projections)
    d_proj = head.dense1_weights.T @ dz1
    d_proj_w = cache.hidden.T @ d_proj
    d_proj_b = np.array([d_proj.sum()])
    d_hidden = np.outer(d_proj, head.proj_weights)
    grads = [d_proj_w, d_proj_b, d_dense1_w, dz1, d_dense2_w, dz2, d_out_w, d_out_b]
    return grads, d_hidden


def model_backward(params, tape, upstream_grad):
    """
    Exakte Gradienten der skalaren Modellausgabe nach allen Parametern.

    Args:
        params (ModelParams): dieselbe Instanz wie beim Vorwärtslauf.
        tape (ForwardTape): aus ``forward_with_tape``.
        upstream_grad (float): ∂L/∂ŷ.

    Raises:
        StaleTapeError: Tape stammt von anderen Parametern oder einer älteren Revision.
    """
    if tape is None or tape.params is not params or tape.revision != params.revision:
        raise StaleTapeError("Tape passt nicht zum aktuellen Parameterstand; Vorwärtslauf wiederholen")

    upstream = float(upstream_grad)
    names, arrays = [], []
    if params.config.use_deep:
        first, second = params.lstm_layers
        cache1, cache2 = tape.layer_caches
        head_grads, d_h2 = _head_backward(params.head, tape.head_cache, upstream)
        dw2, db2, d_h1 = _lstm_layer_backward(second, cache2, d_h2)
        dw1, db1, _ = _lstm_layer_backward(first, cache1, d_h1)
        arrays += [dw1, db1, dw2, db2, *head_grads]
    if params.config.use_wide:
        d_score = upstream
        if params.config.wide_sigmoid:
            s = tape.wide_output
            d_score = upstream * s * (1.0 - s)
        arrays += [d_score * tape.features, np.array([d_score])]
    names = [name for name, _ in params.named_arrays()]
    return ParamGradients(names, arrays)


# =================================================================
# GRADIENTENPRÜFUNG
# =================================================================

def _locate(params, flat_index):
    offset = 0
    for array in params.arrays():
        if flat_index < offset + array.size:
            return array, flat_index - offset
        offset += array.size
    raise IndexError(flat_index)


def numerical_gradient(params, seq, feats, eps=1e-4, indices=None):
    """
    Zentrale finite Differenzen (f(θ+ε) − f(θ−ε)) / 2ε der Modellausgabe.

    Die Parameter werden in-place gestört und danach exakt wiederhergestellt.
    Die Zustände der LSTM-Schichten werden einmal berechnet und nur für
    Störungen in oder unterhalb der jeweiligen Schicht neu gerechnet; die
    Funktionswerte sind bitgleich zu ``model_forward``.
    """
    total = params.size
    indices = range(total) if indices is None else indices
    grad = np.zeros(total)

    first_size = second_size = 0
    hidden1 = hidden2 = None
    if params.config.use_deep:
        seq = _check_sequence(params, seq)
        first, second = params.lstm_layers
        first_size = first.weights.size + first.bias.size
        second_size = second.weights.size + second.bias.size
        hidden1, _ = _lstm_layer_forward(first, seq)
        hidden2, _ = _lstm_layer_forward(second, hidden1)

    def evaluate(k):
        if k < first_size:
            return model_forward(params, seq, feats)
        if k < first_size + second_size:
            return _output_from_hidden(params, _lstm_layer_forward(params.lstm_layers[1], hidden1)[0], feats)
        return _output_from_hidden(params, hidden2, feats)

    for k in indices:
        array, j = _locate(params, k)
        flat = array.reshape(-1)
        original = flat[j]
        flat[j] = original + eps
        f_plus = evaluate(k)
        flat[j] = original - eps
        f_minus = evaluate(k)
        flat[j] = original
        grad[k] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def gradient_check(params, seq, feats, eps=1e-4, indices=None, floor=1e-3):
    """
    Maximaler relativer Fehler zwischen analytischem und numerischem Gradienten.

    Relativer Fehler je Komponente: |a − n| / max(|a|, |n|, floor).

    Returns:
        float: maximaler relativer Fehler über die geprüften Indizes.
    """
    _, tape = forward_with_tape(params, seq, feats)
    analytic = model_backward(params, tape, 1.0).to_vector()
    indices = np.arange(params.size) if indices is None else np.asarray(indices)
    numeric = numerical_gradient(params, seq, feats, eps, indices)
    a, n = analytic[indices], numeric[indices]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if indices.size else 0.0
