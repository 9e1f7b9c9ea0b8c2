"""Hyperbolic Kähler-Ricci flow on flat complex tori."""
