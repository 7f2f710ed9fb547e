"""Predict the last frame in latent space with the squared and the geodesic loss.

Both predictors see the posterior means of the first seven frames. The
squared loss regresses on the encoded eighth frame; the geodesic loss
regresses on the first interior point of the decoder geodesic towards it.
Pixel MSE and BCE of the decoded predictions are printed for both.
"""
import argparse

from mgpvae import datasets, predictor, vae
from mgpvae.datasets import ToyVideoSpec
from mgpvae.predictor import PredictorConfig
from mgpvae.vae import ModelConfig


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sequences", type=int, default=500)
    parser.add_argument("--epochs", type=int, default=10)
    parser.add_argument("--predictor-epochs", type=int, default=10)
    args = parser.parse_args()

    train = datasets.gen_bouncing_glyphs(ToyVideoSpec(num_sequences=args.sequences, seed=0))
    test = datasets.gen_bouncing_glyphs(ToyVideoSpec(num_sequences=200, seed=1))
    model = vae.train(train, ModelConfig(epochs=args.epochs)).model

    for kind in ("squared", "geodesic"):
        ck = predictor.train_predictor(model, train, PredictorConfig(k=1, loss_kind=kind,
                                                                     epochs=args.predictor_epochs))
        scores = predictor.evaluate(model, ck.predictor, test)
        print(f"{kind:>8} loss: predictor loss {ck.history[0]['loss']:.3f} -> {ck.history[-1]['loss']:.3f}, "
              f"pixel mse={scores['mse']:.1f} bce={scores['bce']:.1f}")


if __name__ == "__main__":
    main()
