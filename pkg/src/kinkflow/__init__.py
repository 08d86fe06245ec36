"""Free-fermion simulation and benchmarking of quantum annealing on embedded Ising chains."""

__version__ = "0.1.0"
