import numpy as np
import pandas as pd
import matplotlib.pyplot as plt


def load(path="data/srca_core.csv"):
    return pd.read_csv(path)


def ols(x, y):
    slope, intercept = np.polyfit(x, y, 1)
    return slope, intercept


# Table 2: core summary
def table_2(df):
    summary = df.groupby("species").agg(length=("depth_mm", "max"), n=("depth_mm", "size"))
    print(summary.to_latex())


# Figure 2: Sr/Ca against temperature
def figure_2(df, sst):
    slope, intercept = ols(sst, df["sr_ca_mmol_mol"])
    fig, ax = plt.subplots()
    ax.scatter(sst, df["sr_ca_mmol_mol"], s=5)
    ax.plot(sst, slope * sst + intercept)
    fig.savefig("calib.pdf")


# Figure 5: posterior of the Bayesian regression
def figure_5(trace):
    fig, axes = plt.subplots(1, 2)
    axes[0].hist(trace["slope"], bins=50)
    axes[1].hist(trace["intercept"], bins=50)
    fig.savefig("bayes.pdf")


# Figure 7: reconstruction against instrumental temperature
def figure_7(years, recon, sst):
    fig, ax = plt.subplots()
    ax.plot(years, recon)
    ax.plot(years, sst)
    fig.savefig("reconstruction.pdf")


# Table 3: slopes and intercepts per colony
def table_3(df, sst):
    rows = {c: ols(sst, g["sr_ca_mmol_mol"]) for c, g in df.groupby("colony")}
    print(pd.DataFrame(rows, index=["slope", "intercept"]).T.to_latex())
