"""Adam optimizer over flat parameter dicts."""

import numpy as np


class Adam:
    """Bias-corrected Adam; updates parameter arrays in place."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for key, p in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / b1t) * m / (np.sqrt(v / b2t) + self.eps)

    def state_dict(self):
        state = {"t": np.array(self.t, dtype=np.int64)}
        for key in self.params:
            state[f"m.{key}"] = self.m[key]
            state[f"v.{key}"] = self.v[key]
        return state

    def load_state_dict(self, state):
        self.t = int(state["t"])
        for key in self.params:
            self.m[key][...] = state[f"m.{key}"]
            self.v[key][...] = state[f"v.{key}"]
