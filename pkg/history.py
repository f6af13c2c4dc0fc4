"""
Training History Module

Tracks per-epoch loss and validation records, answers best-epoch queries and
serializes to plain JSON so the history can travel inside a checkpoint.
"""


class TrainingHistory:
    """
    Ordered per-epoch records. Every epoch is kept so the best-SeK record
    survives a resume.
    """

    def __init__(self):
        self.records = []

    def add_epoch(self, epoch, losses, scores=None, change_f1=None):
        """
        Record one finished epoch.

        Args:
            epoch (int): 1-based epoch number
            losses (dict): Mean LossReport values ('total', 'sem', ...)
            scores (ScdScores, optional): Validation scores
            change_f1 (float, optional): Validation F1 of the binarized change map
        """
        record = {"epoch": int(epoch), "losses": {k: float(v) for k, v in losses.items()}}
        if scores is not None:
            record["scores"] = {"oa": float(scores.oa), "miou": float(scores.miou),
                                "sek": float(scores.sek), "f1": float(scores.f1)}
        if change_f1 is not None:
            record["change_f1"] = float(change_f1)
        self.records.append(record)
        return record

    def __len__(self):
        return len(self.records)

    def best(self, metric="sek"):
        """
        Record with the highest validation score; the earliest wins ties.

        Args:
            metric (str, optional): Score name. Defaults to "sek".

        Returns:
            dict: Best record, or None when no record carries scores
        """
        best = None
        for record in self.records:
            if "scores" not in record:
                continue
            if best is None or record["scores"][metric] > best["scores"][metric]:
                best = record
        return best

    def losses(self, component="total"):
        """Per-epoch values of one loss component."""
        return [record["losses"][component] for record in self.records]

    def summarize(self):
        """
        One line per epoch, for logs.

        Returns:
            str: A summary of the history
        """
        lines = []
        for record in self.records:
            line = f"epoch {record['epoch']}: loss {record['losses'].get('total', float('nan')):.4f}"
            if "scores" in record:
                s = record["scores"]
                line += f" | mIoU {s['miou']:.4f} SeK {s['sek']:.4f} F1 {s['f1']:.4f}"
            if "change_f1" in record:
                line += f" | change F1 {record['change_f1']:.4f}"
            lines.append(line)
        return "\n".join(lines)

    def to_list(self):
        return [dict(record) for record in self.records]

    @classmethod
    def from_list(cls, records):
        history = cls()
        history.records = [dict(record) for record in records]
        return history
