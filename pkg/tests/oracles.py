"""
Independent reference computations used by the tests.

None of these share code with the package beyond the ``Mode``/``Coin``
labels: unitaries are assembled entry by entry from the coin and shift
definitions, the two-photon oracle works in the second-quantized monomial
basis, and recurrence is computed by explicit path enumeration.
"""

import itertools
import math

import numpy as np

SQ2 = 1 / math.sqrt(2)
HADAMARD_2x2 = np.array([[SQ2, SQ2], [SQ2, -SQ2]])


def coin_matrix(phi_deg):
    phi = math.radians(phi_deg)
    return np.array([[math.cos(phi), math.sin(phi)], [math.sin(phi), -math.cos(phi)]])


def index(x, c, radius):
    """Flat index of (x, c) on the window [-radius, radius], c in {0, 1}."""
    return 2 * (x + radius) + c


def dense_unitary(radius, coin=HADAMARD_2x2):
    """Coin-then-shift matrix on [-radius, radius]; flows off the edge are dropped."""
    dim = 2 * (2 * radius + 1)
    shift = np.zeros((dim, dim))
    for x in range(-radius, radius + 1):
        if x + 1 <= radius:
            shift[index(x + 1, 0, radius), index(x, 0, radius)] = 1
        if x - 1 >= -radius:
            shift[index(x - 1, 1, radius), index(x, 1, radius)] = 1
    coin_op = np.kron(np.eye(2 * radius + 1), coin)
    return shift @ coin_op


def dense_vector(amplitudes, radius):
    v = np.zeros(2 * (2 * radius + 1), dtype=complex)
    for (x, c), a in amplitudes.items():
        v[index(x, int(c), radius)] = a
    return v


def dense_walk(amplitudes, n, radius):
    """U^n applied to a state given as {(x, c): amp}; returns {(x, c): amp}."""
    u = dense_unitary(radius)
    v = np.linalg.matrix_power(u, n) @ dense_vector(amplitudes, radius)
    return {
        (x, c): v[index(x, c, radius)]
        for x in range(-radius, radius + 1)
        for c in (0, 1)
    }


# second-quantized two-photon oracle ------------------------------------


def fock_evolve(poly, u):
    """
    Apply a single-particle unitary to a two-photon state written as a
    polynomial {(i, j): coeff} in creation operators a_i^dag a_j^dag |0>,
    with i <= j.
    """
    out = {}
    nz = [np.flatnonzero(u[:, i]) for i in range(u.shape[1])]
    for (i, j), c in poly.items():
        for k in nz[i]:
            for l in nz[j]:
                key = (min(k, l), max(k, l))
                out[key] = out.get(key, 0) + c * u[k, i] * u[l, j]
    return out


def fock_annihilate(poly, m, dim):
    """a_m on the two-photon polynomial, giving a single-photon vector (unnormalized)."""
    v = np.zeros(dim, dtype=complex)
    for (k, l), c in poly.items():
        if k == m:
            v[l] += c
        if l == m:
            v[k] += c
    return v


def fock_conditioned_distribution(loss_step, mode, n):
    """
    Survivor P(x, c) at step n after annihilating one photon in ``mode`` at
    ``loss_step``, starting from a_{0H}^dag a_{0V}^dag |0>.
    """
    radius = n
    u = dense_unitary(radius)
    dim = u.shape[0]
    poly = {(index(0, 0, radius), index(0, 1, radius)): 1.0}
    for _ in range(loss_step):
        poly = fock_evolve(poly, u)
    v = fock_annihilate(poly, index(mode[0], int(mode[1]), radius), dim)
    weight = float(np.vdot(v, v).real)
    v = np.linalg.matrix_power(u, n - loss_step) @ (v / math.sqrt(weight))
    probs = {
        (x, c): abs(v[index(x, c, radius)]) ** 2
        for x in range(-radius, radius + 1)
        for c in (0, 1)
    }
    return probs, weight


def dense_joint(n):
    """Two-photon amplitude matrix at step n via (U kron U) on the vectorized input."""
    radius = n
    u = dense_unitary(radius)
    dim = u.shape[0]
    a = np.zeros((dim, dim), dtype=complex)
    h, v = index(0, 0, radius), index(0, 1, radius)
    a[h, v] = a[v, h] = SQ2
    big = np.kron(u, u)
    vec = np.linalg.matrix_power(big, n) @ a.ravel()
    return vec.reshape(dim, dim), radius


# recurrence by path enumeration ------------------------------------------


def first_return_path_sum(coin_vector, horizon):
    """
    First-arrival probabilities at x = 0 for t = 1..horizon, summing path
    amplitudes over all coin-choice sequences that avoid x = 0 before t.
    """
    psi0 = np.asarray(coin_vector, dtype=complex)
    psi0 = psi0 / np.linalg.norm(psi0)
    out = []
    for t in range(1, horizon + 1):
        amp = np.zeros(2, dtype=complex)
        for path in itertools.product((0, 1), repeat=t):
            x = 0
            vec = psi0
            ok = True
            for s, d in enumerate(path, 1):
                vec = HADAMARD_2x2 @ vec
                a = vec[d]
                vec = np.zeros(2, dtype=complex)
                vec[d] = a
                x += 1 if d == 0 else -1
                if x == 0 and s < t:
                    ok = False
                    break
            if ok and x == 0:
                amp += vec
        out.append(float(np.sum(np.abs(amp) ** 2)))
    return out
