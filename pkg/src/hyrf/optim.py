"""Adam with named parameter slots and row remapping for densify/prune."""

import numpy as np


class Adam:
    """Bias-corrected Adam over a dictionary of named arrays.

    State is created lazily per name. The step counter is per parameter so
    rows that appear mid-training start from fresh moments like the rest of
    their array.
    """

    def __init__(self, betas=(0.9, 0.999), eps=1e-15):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = {}

    def step(self, name, param, grad, lr):
        """In-place update of ``param``; a zero ``lr`` leaves it untouched.

        Moments are kept in the parameter's dtype and all arithmetic runs in
        place through one scratch buffer, since the hash tables are large.
        """
        st = self.state.get(name)
        if st is None or st["m"].shape != param.shape:
            st = self.state[name] = {"m": np.zeros_like(param), "v": np.zeros_like(param),
                                     "buf": np.empty_like(param), "t": 0}
        st["t"] += 1
        m, v, buf = st["m"], st["v"], st["buf"]
        np.multiply(grad, 1 - self.beta1, out=buf, casting="unsafe")
        m *= self.beta1
        m += buf
        np.multiply(grad, grad, out=buf, casting="unsafe")
        buf *= 1 - self.beta2
        v *= self.beta2
        v += buf
        if lr == 0:
            return
        bc1 = 1 - self.beta1 ** st["t"]
        bc2 = 1 - self.beta2 ** st["t"]
        np.sqrt(v, out=buf)
        buf *= 1.0 / np.sqrt(bc2)
        buf += self.eps
        np.divide(m, buf, out=buf)
        buf *= lr / bc1
        param -= buf

    def remap(self, name, source, fresh):
        """Reorder state rows to follow a densify/prune index map."""
        st = self.state.get(name)
        if st is None:
            return
        for key in ("m", "v"):
            arr = st[key][source]
            arr[fresh] = 0
            st[key] = arr
        st["buf"] = np.empty_like(st["m"])


def exponential_lr(step, lr_init, lr_final, max_steps):
    """Log-linear interpolation from ``lr_init`` to ``lr_final``."""
    if max_steps <= 0:
        return lr_init
    t = np.clip(step / max_steps, 0.0, 1.0)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))
