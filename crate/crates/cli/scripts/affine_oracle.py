"""Closed-form Perron root of the CCAPM operator on a Gaussian AR(1).

With X' = aX + sigma*eps and m = beta*exp(-gamma*X'), the function
exp(b x) with b = -gamma*a/(1-a) is an eigenfunction with eigenvalue
beta*exp(gamma^2 sigma^2 / (2 (1-a)^2)).
"""
import math
import sys


def perron_root(beta, gamma, a, sigma):
    return beta * math.exp(gamma**2 * sigma**2 / (2.0 * (1.0 - a) ** 2))


def eigenfunction_slope(gamma, a):
    return -gamma * a / (1.0 - a)


if __name__ == "__main__":
    beta, gamma, a, sigma = (float(v) for v in sys.argv[1:5]) if len(sys.argv) == 5 else (0.98, 2.0, 0.5, 0.1)
    print(repr(perron_root(beta, gamma, a, sigma)))
    print(repr(eigenfunction_slope(gamma, a)))
