"""Estimator-style front end to the slice orchestrator."""
from __future__ import annotations

import inspect

import numpy as np

from .channels import ChannelSampleSet, generate_channel_samples, make_layout
from .config import SystemConfig, default_config
from .errors import InvalidParameterError
from .orchestrator import algorithm1, evaluate_plan, sensed_channels


class SliceOrchestrator:
    """Two-timescale slice resource orchestrator.

    ``fit`` runs the ADMM bandwidth allocation on channel samples;
    ``decide`` / ``predict`` / ``score`` run the minislot loop on sensed
    channels with the fitted bandwidths held fixed.

    Parameters
    ----------
    config : SystemConfig, optional
        Defaults to the built-in parameter set.
    n_samples : int, optional
        Channel samples drawn when ``fit`` gets no data (``config.algo.M``
        when omitted); 1 gives the single-sample baseline.
    method : {"auto", "reduced", "sdp"}
        Subproblem route.
    seed : int, optional
        Seed for drawn samples and layout.

    Attributes
    ----------
    omega_ : ndarray
        Consensus bandwidth per mIoT slice, MHz.
    plan_ : SlotPlan
    n_iter_ : int
    layout_ : Layout
    """

    def __init__(self, config: SystemConfig | None = None, n_samples=None, method="auto",
                 seed=None):
        self.config = config
        self.n_samples = n_samples
        self.method = method
        self.seed = seed

    # parameter plumbing in the usual estimator convention
    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [p for p in sig.parameters if p != "self"]

    def get_params(self, deep=True):
        return {k: getattr(self, k) for k in self._param_names()}

    def set_params(self, **params):
        valid = self._param_names()
        for k, v in params.items():
            if k not in valid:
                raise InvalidParameterError(f"unknown parameter {k!r}")
            setattr(self, k, v)
        return self

    def _cfg(self):
        return self.config if self.config is not None else default_config()

    def _seed(self, cfg):
        return cfg.algo.seed if self.seed is None else self.seed

    def fit(self, X=None, y=None):
        """Allocate mIoT bandwidth from channel samples.

        Parameters
        ----------
        X : ndarray of shape (M, N_u, J*K) or ChannelSampleSet, optional
            Channel samples; drawn from the configured model when omitted.
        y : ignored

        Returns
        -------
        self
        """
        cfg = self._cfg()
        seed = self._seed(cfg)
        if X is None:
            M = cfg.algo.M if self.n_samples is None else self.n_samples
            samples = generate_channel_samples(cfg, M, seed)
        elif isinstance(X, ChannelSampleSet):
            samples = X
        else:
            X = np.asarray(X)
            if X.ndim != 3 or X.shape[1:] != (cfg.n_urllc_devices, cfg.J * cfg.K):
                raise InvalidParameterError(
                    f"expected shape (M, {cfg.n_urllc_devices}, {cfg.J * cfg.K}), got {X.shape}")
            ls = cfg.algo.layout_seed if cfg.algo.layout_seed is not None else seed
            samples = ChannelSampleSet(make_layout(cfg, ls), X)
        self.plan_ = algorithm1(cfg, samples, self.method)
        self.omega_ = self.plan_.omega.copy()
        self.n_iter_ = self.plan_.iterations
        self.layout_ = samples.layout
        return self

    def _check_fitted(self):
        if not hasattr(self, "plan_"):
            raise InvalidParameterError("call fit before using the estimator")

    def _sensed(self, X):
        cfg = self._cfg()
        if X is None:
            return sensed_channels(cfg, self._seed(cfg), cfg.algo.T, self.layout_)
        X = np.asarray(X)
        if X.ndim == 2:
            X = X[None]
        return X

    def evaluate(self, X=None):
        """Minislot loop on sensed channels; returns a SlotOutcome."""
        self._check_fitted()
        return evaluate_plan(self._cfg(), self.plan_, self._sensed(X), self.method)

    def decide(self, X=None):
        """Per-minislot decisions (association and beamformers)."""
        return self.evaluate(X).decisions

    def predict(self, X=None):
        """Served flags, array of shape (T, N_u)."""
        return np.array([d.served for d in self.decide(X)])

    def score(self, X=None, y=None):
        """Total slot utility ``U^I + rho U^u`` on the sensed channels."""
        return self.evaluate(X).utility_total
