"""scikit-learn compatible classifier wrapping the fractional spiking network."""

from __future__ import annotations

import zlib
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data_io import encode
from .fde import SolverOptions
from .network import NetworkSpec
from .neuron import NeuronParams
from .surrogate import SurrogateSpec
from .train import TrainConfig, evaluate, train_loop


class FractionalSpikingClassifier(ClassifierMixin, BaseEstimator):
    """Dense fractional LIF network trained by the adjoint method.

    Features are firing intensities in ``[0, 1]`` (values outside are
    clamped by the encoder); each sample is rate-coded into ``T`` spike
    frames. Class scores are the output spike counts.

    Parameters mirror :class:`TrainConfig` and :class:`NeuronParams`;
    ``hidden`` lists hidden layer widths.
    """

    def __init__(
        self,
        hidden: Sequence[int] = (128,),
        alpha: float = 1.0,
        T: int = 8,
        time_interval: float = 1.0,
        tau_alpha: float = 2.0,
        theta: float = 0.25,
        R: float = 1.0,
        reset: str = "soft_subtract",
        model: str = "lif",
        surrogate: str = "sigmoid",
        surrogate_scale: Optional[float] = 10.0,
        method: str = "abm_predictor",
        memory_window: Optional[int] = None,
        epochs: int = 30,
        batch_size: int = 64,
        optimizer: str = "adam",
        lr: float = 1e-3,
        loss: str = "cross_entropy_on_counts",
        encoding: str = "bernoulli",
        init_scale: float = 1.0,
        random_state: int = 0,
        verbose: bool = False,
    ):
        self.hidden = hidden
        self.alpha = alpha
        self.T = T
        self.time_interval = time_interval
        self.tau_alpha = tau_alpha
        self.theta = theta
        self.R = R
        self.reset = reset
        self.model = model
        self.surrogate = surrogate
        self.surrogate_scale = surrogate_scale
        self.method = method
        self.memory_window = memory_window
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.lr = lr
        self.loss = loss
        self.encoding = encoding
        self.init_scale = init_scale
        self.random_state = random_state
        self.verbose = verbose

    def _config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            optimizer=self.optimizer,
            lr=self.lr,
            loss=self.loss,
            seed=self.random_state,
            T=self.T,
            time_interval=self.time_interval,
            solver=SolverOptions(self.method, self.memory_window),
            alpha=self.alpha,
            encoding=self.encoding,
        )

    def _neuron(self) -> NeuronParams:
        return NeuronParams(
            alpha=self.alpha,
            tau_alpha=self.tau_alpha,
            R=self.R,
            theta=self.theta,
            reset=self.reset,
            model=self.model,
            surrogate=SurrogateSpec(self.surrogate, self.surrogate_scale),
        )

    def fit(self, X, y, X_val=None, y_val=None):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        encoder = LabelEncoder().fit(y)
        if len(encoder.classes_) < 2:
            raise ValueError(f"need samples of at least two classes, got 1 class ({encoder.classes_[0]!r})")
        self.label_encoder_ = encoder
        self.classes_ = encoder.classes_
        yi = encoder.transform(y)
        cfg = self._config()
        dims = [X.shape[1], *self.hidden, len(self.classes_)]
        spec = NetworkSpec.build(dims, self.alpha, self._neuron(), seed=self.random_state)
        if self.init_scale != 1.0:
            spec = spec.with_weights([W * self.init_scale for W in spec.weights()])
        val = None
        if X_val is not None:
            Xv = validate_data(self, X_val, dtype=np.float64, reset=False)
            val = (Xv, encoder.transform(y_val))
        report = (lambda rec: print(f"epoch {rec['epoch']}: loss {rec['train_loss']:.4f}")) if self.verbose else None
        self.network_, self.metrics_ = train_loop(spec, (X, yi), cfg, test_data=val, on_epoch=report)
        return self

    def _encode_rows(self, X, _rng):
        # each row gets its own stream keyed by its contents, so a sample's
        # prediction does not depend on its neighbours or position
        cfg = self._config()
        out = np.empty((cfg.T,) + X.shape, dtype=np.uint8)
        for i, row in enumerate(X):
            key = zlib.crc32(np.ascontiguousarray(row).tobytes())
            rng = np.random.default_rng([cfg.eval_seed, key])
            out[:, i] = encode(cfg.encoding, row, cfg.T, rng)
        return out

    def _evaluate(self, X):
        check_is_fitted(self, "network_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return evaluate(self.network_, X, cfg=self._config(), encoder=self._encode_rows)

    def decision_function(self, X) -> np.ndarray:
        """Output spike counts, shape ``(n_samples, n_classes)``.

        With two classes this is ``counts[:, 1] - counts[:, 0]``, positive for
        ``classes_[1]``, as scikit-learn expects of binary classifiers.
        """
        counts = self._evaluate(X)["counts"]
        if len(self.classes_) == 2:
            return counts[:, 1] - counts[:, 0]
        return counts

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self._evaluate(X)["counts"], axis=1)

    def predict(self, X) -> np.ndarray:
        pred = self._evaluate(X)["pred"]
        return self.classes_[pred]
