import matplotlib.pyplot as plt
import numpy as np

from density_peaks import assign, local_density, min_distance_to_denser


def pairwise(points):
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff ** 2).sum(-1))


# Figure 1: decision graph for the 28-point toy example
def figure_1(points, d_c):
    dist = pairwise(points)
    rho = local_density(dist, d_c)
    delta, _ = min_distance_to_denser(dist, rho)
    fig, ax = plt.subplots()
    ax.scatter(rho, delta)
    ax.set_xlabel("rho")
    ax.set_ylabel("delta")
    fig.savefig("fig1.pdf")


# Figure 2: synthetic distributions coloured by assignment
def figure_2(points, d_c, rho_min, delta_min):
    dist = pairwise(points)
    rho = local_density(dist, d_c)
    delta, nearest = min_distance_to_denser(dist, rho)
    labels = assign(rho, delta, nearest, rho_min, delta_min)
    fig, ax = plt.subplots()
    ax.scatter(points[:, 0], points[:, 1], c=labels, s=4)
    fig.savefig("fig2.pdf")


# Figure 3: sweep over d_c
def figure_3(points, cutoffs, rho_min, delta_min):
    dist = pairwise(points)
    fig, axes = plt.subplots(1, len(cutoffs))
    for ax, d_c in zip(axes, cutoffs):
        rho = local_density(dist, d_c)
        delta, nearest = min_distance_to_denser(dist, rho)
        ax.scatter(points[:, 0], points[:, 1], c=assign(rho, delta, nearest, rho_min, delta_min), s=2)
    fig.savefig("fig3.pdf")
