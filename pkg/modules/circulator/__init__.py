# Circulator simulation package: device formulas, phasor model, harmonic and
# transient solvers, figures of merit, tune-up and engineering budgets.
