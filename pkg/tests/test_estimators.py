import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wsimil.estimators import BagNormalizer, MILBagClassifier
from wsimil.synth import bags_by_split, make_dataset


@pytest.fixture(scope="module")
def splits():
    return bags_by_split(make_dataset(seed=13, n_wsis=80, dim=16, difficulty=3.0))


class TestBagNormalizer:
    def test_fit_transform_moments(self, splits):
        norm = BagNormalizer()
        out = norm.fit_transform(splits["train"])
        rows = np.vstack([b.instances for b in out])
        assert np.max(np.abs(rows.mean(axis=0))) <= 1e-9
        assert np.max(np.abs(rows.std(axis=0) - 1.0)) <= 1e-6

    def test_transform_requires_fit(self, splits):
        with pytest.raises(NotFittedError):
            BagNormalizer().transform(splits["train"])

    def test_get_params(self):
        norm = BagNormalizer(eps=1e-6)
        assert norm.get_params() == {"eps": 1e-6}
        assert clone(norm).eps == 1e-6


class TestMILBagClassifier:
    def test_sklearn_param_contract(self):
        model = MILBagClassifier(head="mil", epochs=3, seed=5)
        params = model.get_params()
        assert params["head"] == "mil" and params["epochs"] == 3
        cloned = clone(model)
        assert cloned.get_params() == params
        model.set_params(epochs=7)
        assert model.epochs == 7

    def test_fit_predict_shapes(self, splits):
        model = MILBagClassifier(head="mrl", epochs=2, hidden=16, seed=1)
        model.fit(splits["train"], val_bags=splits["val"])
        probs = model.predict_proba(splits["test"])
        assert probs.shape == (len(splits["test"]), 6)
        assert np.all((probs > 0) & (probs < 1))
        preds = model.predict(splits["test"])
        assert set(np.unique(preds)) <= {0, 1}
        logits = model.decision_function(splits["test"])
        assert np.allclose(probs, 1 / (1 + np.exp(-logits)))

    def test_predict_requires_fit(self, splits):
        with pytest.raises(NotFittedError):
            MILBagClassifier().predict_proba(splits["test"])

    def test_determinism(self, splits):
        a = MILBagClassifier(epochs=2, hidden=16, seed=3).fit(
            splits["train"], val_bags=splits["val"]
        )
        b = MILBagClassifier(epochs=2, hidden=16, seed=3).fit(
            splits["train"], val_bags=splits["val"]
        )
        assert np.array_equal(
            a.predict_proba(splits["test"]), b.predict_proba(splits["test"])
        )

    def test_label_override(self, splits):
        bags = splits["train"][:10]
        y = np.zeros((10, 6), dtype=int)
        y[:5] = 1
        model = MILBagClassifier(epochs=1, hidden=8, seed=0)
        model.fit(bags, y=y)
        assert model.params_ is not None

    def test_attention_scores(self, splits):
        model = MILBagClassifier(head="mil", epochs=1, hidden=8, seed=0)
        model.fit(splits["train"], val_bags=splits["val"])
        bag = splits["test"][0]
        attn = model.attention_scores(bag)
        assert attn.shape == (bag.size,)
        assert abs(attn.sum() - 1.0) <= 1e-12

    def test_checkpoint_round_trip(self, splits, tmp_path):
        model = MILBagClassifier(head="gmil", epochs=2, hidden=16, seed=2)
        model.fit(splits["train"], val_bags=splits["val"])
        path = tmp_path / "ckpt.mrlp"
        model.save(path)
        assert path.exists() and (tmp_path / "ckpt.mrlp.norm").exists()
        back = MILBagClassifier.from_checkpoint(path)
        assert back.head == "gmil"
        assert np.array_equal(
            back.predict_proba(splits["test"]), model.predict_proba(splits["test"])
        )

    def test_checkpoint_without_normalizer(self, splits, tmp_path):
        model = MILBagClassifier(head="mil", epochs=1, hidden=8, seed=0,
                                 normalize=False)
        model.fit(splits["train"])
        path = tmp_path / "plain.mrlp"
        model.save(path)
        back = MILBagClassifier.from_checkpoint(path)
        assert back.normalizer_ is None
        assert np.array_equal(
            back.predict_proba(splits["test"]), model.predict_proba(splits["test"])
        )
