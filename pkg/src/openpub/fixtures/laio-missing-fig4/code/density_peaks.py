"""Density peak clustering."""
import numpy as np


def local_density(dist, d_c):
    # Gaussian kernel
    return np.exp(-(dist / d_c) ** 2).sum(axis=1) - 1


def min_distance_to_denser(dist, rho):
    order = np.argsort(-rho)
    delta = np.zeros_like(rho)
    nearest = np.zeros(len(rho), dtype=int)
    delta[order[0]] = dist[order[0]].max()
    for i, idx in enumerate(order[1:], 1):
        denser = order[:i]
        j = denser[np.argmin(dist[idx, denser])]
        delta[idx] = dist[idx, j]
        nearest[idx] = j
    return delta, nearest


def assign(rho, delta, nearest, rho_min, delta_min):
    centers = np.where((rho > rho_min) & (delta > delta_min))[0]
    labels = -np.ones(len(rho), dtype=int)
    labels[centers] = np.arange(len(centers))
    for idx in np.argsort(-rho):
        if labels[idx] < 0:
            labels[idx] = labels[nearest[idx]]
    return labels
