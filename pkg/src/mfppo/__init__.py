"""Mean-field games on grid worlds: exact solvers and MF-PPO."""
