"""scikit-learn facade: train a softmax classifier with the anarchic simulator.

``fit`` deals half of the training rows out to ``n_workers`` label-skewed
workers (the slack keeps skewed class draws feasible), runs AFA-CD or
AFA-CS for ``rounds`` server rounds, and keeps the final global model.  The classifier then behaves like any linear sklearn model.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .data import Dataset, PartitionPlan, partition_by_label
from .exceptions import ConfigurationError
from .numerics import logreg_problem
from .sim import RunConfig, UniformLastR, UniformNoReplacement, Zero, run_experiment
from .worker import Constant, DynamicUniform, FedProx, PlainSGD, Scaffold

__all__ = ["AnarchicFederatedClassifier"]


class AnarchicFederatedClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by simulated anarchic workers.

    Parameters
    ----------
    n_workers : int
        Number of simulated workers ``M``.
    m : int or None
        Arrivals per round; ``None`` means every worker arrives.
    p : int
        Classes per worker (1 is the most skewed split).
    mode : {"cd", "cs"}
    eta, eta_l : float
        Server and local learning rates.
    rounds : int
        Number of server rounds ``T``.
    local_steps : int
        ``K`` (or ``c`` when ``dynamic_steps`` is set).
    dynamic_steps : bool
        Draw ``K`` uniformly from ``1..2c`` each time a worker runs.
    delay : int
        Pull from one of the last ``delay`` versions (1 = fresh).
    batch_size : int or None
    optimizer : {"sgd", "fedprox", "scaffold"}
    mu : float
        FedProx proximal weight.
    l2 : float
    random_state : int
    """

    def __init__(
        self,
        n_workers=10,
        m=None,
        p=2,
        mode="cd",
        eta=1.0,
        eta_l=0.1,
        rounds=100,
        local_steps=5,
        dynamic_steps=False,
        delay=1,
        batch_size=32,
        optimizer="sgd",
        mu=0.1,
        l2=0.0,
        random_state=0,
    ):
        self.n_workers = n_workers
        self.m = m
        self.p = p
        self.mode = mode
        self.eta = eta
        self.eta_l = eta_l
        self.rounds = rounds
        self.local_steps = local_steps
        self.dynamic_steps = dynamic_steps
        self.delay = delay
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.mu = mu
        self.l2 = l2
        self.random_state = random_state

    def _optimizer(self):
        if self.optimizer == "sgd":
            return PlainSGD()
        if self.optimizer == "fedprox":
            return FedProx(self.mu)
        if self.optimizer == "scaffold":
            return Scaffold()
        raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if self.n_workers < 1:
            raise ConfigurationError("n_workers must be >= 1")
        self.n_features_in_ = X.shape[1]

        ds = Dataset(X, codes, len(self.classes_))
        per_worker = len(codes) // (2 * self.n_workers)
        plan = PartitionPlan(self.n_workers, self.p, int(self.random_state), per_worker)
        parts = partition_by_label(ds, plan)
        problem = logreg_problem(parts, l2=self.l2)

        batch = self.batch_size
        if batch is not None and batch >= per_worker:
            batch = None
        m = self.n_workers if self.m is None else self.m
        cfg = RunConfig(
            problem,
            T=self.rounds,
            seed=int(self.random_state),
            arrivals=UniformNoReplacement(m),
            delay=Zero() if self.delay <= 1 else UniformLastR(self.delay),
            steps=DynamicUniform(self.local_steps) if self.dynamic_steps else Constant(self.local_steps),
            optimizer=self._optimizer(),
            eta=self.eta,
            eta_l=self.eta_l,
            batch_size=batch,
            mode=self.mode,
        )
        self.trace_ = run_experiment(cfg)
        W, b = problem.models[0].unpack(self.trace_.final_x)
        self.coef_ = W.copy()
        self.intercept_ = b.copy()
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        z = self.decision_function(X)
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
