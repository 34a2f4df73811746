"""Tabular constrained-MDP toolkit: online primal-dual natural actor-critic plus exact oracles."""
