"""Two three-question mixtures where every quantity has a closed form.

Run with ``python demos/worked_examples.py``.
"""

import numpy as np

from lls import Basis, MixingModel, SurveyDesign
from lls.moments import ExactMoments, exact_frequency_matrix, exact_moment
from lls.scores import bayes_score, estimate_score
from lls.subspace import find_subspace, subspace_distance

design = SurveyDesign((2, 2, 2))
basis = Basis(design, np.array([[1, 0, 1, 0, 1, 0], [0.5, 0.5, 0, 1, 0, 1]], dtype=float))

# uniform mass on the segment between the two basis vectors
segment = MixingModel.uniform_segment(basis, [1, 0], [0, 1])
# two equally likely individuals
pair = MixingModel(basis, [[0.1, 0.9], [0.4, 0.6]], [0.5, 0.5])

for name, model in (("segment", segment), ("pair", pair)):
    print(f"--- {name}")
    for p in [(1, 0, 0), (0, 0, 1), (1, 0, 1)]:
        print(f"  M{p} = {exact_moment(model, p):.6f}")
    print("  E(G | X3 = 1), Bayes:      ", bayes_score(model, (0, 0, 1)).round(6))
    est = estimate_score(ExactMoments(model), basis, (0, 0, 1))
    print("  E(G | X3 = 1), moment eqs: ", est.g.round(6), f"residual {est.residual:.1e}")

fm = exact_frequency_matrix(segment)
print("\nsecond-order block of question 1 (segment):")
print(fm.second[:2, :2].round(6))

fit = find_subspace(fm, 2)
print(f"plane recovered from exact moments, distance {subspace_distance(fit.basis, basis):.2e}")
