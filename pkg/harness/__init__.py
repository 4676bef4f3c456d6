# Experiment harness package
