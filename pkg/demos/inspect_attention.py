"""Peek inside a trained model: word attention and score maps.

Trains briefly on a small world, then dissects one expression: which words
each component head attends to, and how the pair scores pick the answer.

Run with: python3 demos/inspect_attention.py
"""

from relground.evaluation import attention_record, inspect_expression
from relground.language import Vocabulary
from relground.model import prepare_dataset
from relground.shapeworld import ShapeWorldConfig, generate_split_dataset, template_vocabulary
from relground.training import TrainConfig, train


def attention_bar(weight, width=20):
    return "#" * max(1, round(weight * width)) if weight > 0.005 else ""


def main():
    data_config = ShapeWorldConfig(grid_size=4, seed=3, min_shapes=5, max_shapes=8, retry_budget=5000)
    train_data, test_data = generate_split_dataset(data_config, n_train=300, n_test=60)
    vocab = Vocabulary(template_vocabulary(data_config.colors))
    train_scenes = prepare_dataset(train_data, vocab)
    test_scenes = prepare_dataset(test_data, vocab)
    feature_dim = train_scenes[0].features.matrix.shape[1]

    config = TrainConfig(
        iterations=2400,
        embed_dim=24,
        hidden_dim=24,
        learning_rate=0.01,
        decay_interval=1200,
        log_every=0,
        eval_every=0,
        seed=0,
    )
    print("training a small model (about 40s)...")
    result = train(config, train_scenes, vocab, feature_dim)
    model = result.model

    scene = test_scenes[1]
    record = inspect_expression(model, scene, 0)

    print()
    print("expression:", " ".join(record["tokens"]))
    print()
    print(record["grid"])
    print("(* marks the predicted subject, + the predicted object)")

    print()
    print("per-head word attention:")
    for head in ("subject", "relation", "object"):
        print(f"  {head}")
        for token, weight in zip(record["tokens"], record[f"{head}_attention"]):
            print(f"    {token:>10} {weight:5.2f} {attention_bar(weight)}")

    print()
    print(f"ground truth subject index {record['gt_subject']}, "
          f"predicted {record['best_pair'][0]}")
    print(f"ground truth object index  {record['gt_object']}, "
          f"predicted {record['best_pair'][1]}")

    # The raw record form used by the evaluation stream.
    print()
    compact = attention_record(model, scene, 0)
    print("attention record keys:", sorted(compact))


if __name__ == "__main__":
    main()
