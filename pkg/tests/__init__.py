# Simulator tests
