import numpy as np

from .errors import ValidationError


class Adam:
    """Adam over a flat parameter vector, with bias correction.

    m_t = b1*m + (1-b1)*g ; v_t = b2*v + (1-b2)*g^2
    theta -= lr * (m_t / (1-b1^t)) / (sqrt(v_t / (1-b2^t)) + eps)
    """

    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValidationError("learning rate must be > 0")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValidationError("betas must lie in [0, 1)")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float | None = None) -> np.ndarray:
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        rate = self.lr if lr is None else lr
        return params - rate * m_hat / (np.sqrt(v_hat) + self.eps)
