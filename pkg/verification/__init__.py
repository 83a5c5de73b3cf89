"""
Independent checks of a computed solution: certificate re-checks, sampling
audits, a brute-force grid oracle and closed-loop simulation.
"""
