"""Test the Markov property of the Ill -> Dead transition.

Two data sets share everything except the clock. In the first, the
Ill -> Dead hazard ignores when a subject fell ill. In the second, each
day of delay before falling ill multiplies the hazard by ``exp(0.3)``.
The landmark score test should stay quiet on the first and reject on the
second.
"""

from msmcohort import (
    LandmarkGrid,
    TransitionModelSpec,
    fit_cox,
    global_markov_test,
    prepare_long,
    simulate_dataset,
)
from msmcohort.simulate import illness_death_spec

for label, spec in [
    ("Markov", illness_death_spec((800,), beta={"x": 0.5}, clock="markov")),
    ("semi-Markov", illness_death_spec((800,), beta={"x": 0.5}, gamma=0.3)),
]:
    records = prepare_long(simulate_dataset(spec, seed=2), spec.space, ["x"])
    # the model under test omits the entry time on purpose
    fit = fit_cox(records, TransitionModelSpec("Ill->Dead", ("x",)))
    result = global_markov_test(records, fit, B=1000, seed=2, space=spec.space)
    print(f"\n{label} data")
    print(result.report())

    # a coarser grid placed by hand
    coarse = global_markov_test(records, fit, LandmarkGrid.between(2, 20, L=4), B=1000, seed=2,
                                space=spec.space)
    print("four landmarks, overall p (S):", round(coarse.overall_p("S"), 3))
