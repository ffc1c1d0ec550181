"""Pure numpy/scipy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np
import scipy.sparse as sp


def csr_matmul(indptr, indices, data, dense, n_rows):
    mat = sp.csr_matrix((data, indices, indptr), shape=(n_rows, dense.shape[0]))
    return np.asarray(mat @ dense)


def lazy_adam_rows(param, exp_avg, exp_avg_sq, grad, rows, lr, beta1, beta2, eps,
                   bias_corr1, bias_corr2):
    g = grad[rows]
    m = beta1 * exp_avg[rows] + (1.0 - beta1) * g
    v = beta2 * exp_avg_sq[rows] + (1.0 - beta2) * (g * g)
    exp_avg[rows] = m
    exp_avg_sq[rows] = v
    param[rows] = param[rows] - lr * (m / bias_corr1) / (np.sqrt(v / bias_corr2) + eps)
