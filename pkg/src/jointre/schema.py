"""Entity types, relation labels and the pair-family table."""
from dataclasses import dataclass

ENTITY_TYPES = ("problem", "test", "treatment")


@dataclass(frozen=True)
class Family:
    name: str
    first_type: str
    second_type: str
    positive_labels: tuple
    none_label: str

    @property
    def labels(self):
        """Classifier output order: positives first, the None label last."""
        return self.positive_labels + (self.none_label,)


@dataclass(frozen=True)
class RelationSchema:
    families: tuple
    entity_types: tuple = ENTITY_TYPES

    def family(self, name) -> Family:
        for fam in self.families:
            if fam.name == name:
                return fam
        raise KeyError(name)

    @property
    def family_names(self):
        return tuple(f.name for f in self.families)

    @property
    def positive_labels(self):
        return tuple(lab for f in self.families for lab in f.positive_labels)

    @property
    def all_labels(self):
        return tuple(lab for f in self.families for lab in f.labels)

    def family_of_label(self, label) -> Family:
        for fam in self.families:
            if label in fam.labels:
                return fam
        raise KeyError(label)

    def family_of_types(self, type_a, type_b):
        """Family for an unordered pair of entity types, or None."""
        for fam in self.families:
            if sorted((type_a, type_b)) == sorted((fam.first_type, fam.second_type)):
                return fam
        return None

    def is_none(self, label):
        return any(label == f.none_label for f in self.families)

    def to_dict(self):
        return {
            "entity_types": list(self.entity_types),
            "families": [
                {"name": f.name, "first_type": f.first_type, "second_type": f.second_type,
                 "positive_labels": list(f.positive_labels), "none_label": f.none_label}
                for f in self.families
            ],
        }

    @classmethod
    def from_dict(cls, d):
        fams = tuple(
            Family(f["name"], f["first_type"], f["second_type"], tuple(f["positive_labels"]), f["none_label"])
            for f in d["families"]
        )
        return cls(fams, tuple(d.get("entity_types", ENTITY_TYPES)))


DEFAULT_SCHEMA = RelationSchema((
    Family("PP", "problem", "problem", ("PIP",), "None-PP"),
    Family("TeP", "test", "problem", ("TeRP", "TeCP"), "None-TeP"),
    Family("TrP", "treatment", "problem", ("TrIP", "TrWP", "TrCP", "TrAP", "TrNAP"), "None-TrP"),
))
