import numpy as np
import pytest

from lib.audit.dataset import (
    AttributeSchema,
    CategoricalRule,
    Dataset,
    LoadOptions,
    OutcomeColumn,
    ProtectedAttribute,
    Record,
    SubgroupKey,
    ThresholdRule,
    binarize,
    enumerate_subgroups,
    load_csv,
    load_schema,
    ratio_label,
    scarcity_report,
    write_csv,
)
from lib.audit.errors import (
    DomainViolation,
    IncompleteRule,
    InvalidSchema,
    MissingColumn,
    MissingLabels,
    MissingValue,
    NonNumericThreshold,
    UnparsableRow,
)
from lib.audit.scenarios import gen_random
from settings import MissingPolicy

LOANS = """sex,age,repaid,approved
Male,25,yes,1
Female,41,no,0
Female,33,yes,1
Male,58,no,0
Female,?,yes,1
Female,62,?,0
"""


class TestSchema:
    def test_categorical_attribute_needs_protected_value(self):
        with pytest.raises(ValueError):
            ProtectedAttribute(name='sex', domain=('Male', 'Female'))

    def test_categorical_attribute_needs_two_values(self):
        with pytest.raises(ValueError):
            ProtectedAttribute(name='sex', domain=('Male',), protected_value='Male')

    def test_protected_value_must_be_in_domain(self):
        with pytest.raises(ValueError):
            ProtectedAttribute(name='sex', domain=('Male', 'Female'), protected_value='Other')

    def test_outcome_accepts_single_value(self):
        column = OutcomeColumn(name='y', positive='>50K')
        assert column.positive == ('>50K',)

    def test_attribute_and_outcome_columns_must_differ(self):
        with pytest.raises(ValueError):
            AttributeSchema(
                attributes=(ProtectedAttribute(name='y', domain=('a', 'b'), protected_value='a'),),
                prediction_column=OutcomeColumn(name='y', positive='1'),
            )

    def test_index_of_unknown_attribute(self, loan_schema):
        with pytest.raises(InvalidSchema):
            loan_schema.index_of('race')

    def test_categorical_rule_groups_disjoint(self):
        with pytest.raises(ValueError):
            CategoricalRule(groups={'a': ('x', 'y'), 'b': ('y',)}, protected='a')

    def test_load_schema_round_trip(self, loan_schema, tmp_path):
        path = tmp_path / 'schema.json'
        path.write_text(loan_schema.model_dump_json(), encoding='utf-8')
        assert load_schema(path) == loan_schema

    def test_load_schema_wraps_validation_errors(self, write_text):
        path = write_text('bad.json', '{"attributes": []}')
        with pytest.raises(InvalidSchema):
            load_schema(path)


class TestLoadCsv:
    def test_drops_rows_with_missing_attributes(self, loan_schema, write_text):
        dataset = load_csv(write_text('loans.csv', LOANS), loan_schema)
        assert dataset.n == 4
        assert dataset.dropped_rows == 2

    def test_rows_with_missing_label_are_dropped(self, loan_schema, write_text):
        dataset = load_csv(write_text('loans.csv', LOANS), loan_schema)
        assert dataset.labels.tolist() == [1, 0, 1, 0]
        assert dataset.has_labels

    def test_error_policy_covers_label(self, loan_schema, write_text):
        path = write_text('loans.csv', "sex,age,repaid,approved\nMale,25,yes,1\nFemale,41,?,0\n")
        with pytest.raises(MissingValue) as e:
            load_csv(path, loan_schema, LoadOptions(missing=MissingPolicy.ERROR))
        assert (e.value.row, e.value.column) == (3, 'repaid')

    def test_schema_without_label_column(self, loan_schema, write_text):
        schema = loan_schema.model_copy(update={'label_column': None})
        dataset = load_csv(write_text('loans.csv', LOANS), schema)
        assert dataset.n == 5
        assert dataset.labels is None
        assert dataset.features['repaid'].tolist() == ['yes', 'no', 'yes', 'no', '?']

    def test_invalid_utf8(self, loan_schema, tmp_path):
        path = tmp_path / 'loans.csv'
        path.write_bytes(b'sex,age,repaid,approved\nMale,25,yes,1\n\xff\xfe,30,no,0\n')
        with pytest.raises(UnparsableRow):
            load_csv(path, loan_schema)

    def test_numeric_domain_sorted_numerically(self, loan_schema, write_text):
        dataset = load_csv(write_text('loans.csv', LOANS), loan_schema)
        assert dataset.schema.attribute('age').domain == ('25', '33', '41', '58')

    def test_error_policy_reports_row(self, loan_schema, write_text):
        options = LoadOptions(missing=MissingPolicy.ERROR)
        with pytest.raises(MissingValue) as e:
            load_csv(write_text('loans.csv', LOANS), loan_schema, options)
        assert e.value.row == 6
        assert e.value.column == 'age'

    def test_missing_column(self, loan_schema, write_text):
        path = write_text('loans.csv', "sex,age,approved\nMale,20,1\n")
        with pytest.raises(MissingColumn) as e:
            load_csv(path, loan_schema)
        assert e.value.column == 'repaid'

    def test_domain_violation_names_line(self, loan_schema, write_text):
        path = write_text('loans.csv', "sex,age,repaid,approved\nMale,20,yes,1\nOther,30,no,0\n")
        with pytest.raises(DomainViolation) as e:
            load_csv(path, loan_schema)
        assert (e.value.row, e.value.column, e.value.value) == (3, 'sex', 'Other')

    def test_outcome_outside_declared_values(self, loan_schema, write_text):
        path = write_text('loans.csv', "sex,age,repaid,approved\nMale,20,yes,maybe\n")
        with pytest.raises(DomainViolation) as e:
            load_csv(path, loan_schema)
        assert e.value.column == 'approved'

    def test_values_are_stripped(self, loan_schema, write_text):
        path = write_text('loans.csv', "sex, age ,repaid,approved\n Female , 30 , yes , 1 \n")
        dataset = load_csv(path, loan_schema)
        assert dataset.values_of(0) == ('Female', '30')
        assert dataset.predictions.tolist() == [True]

    def test_write_then_load_gives_same_dataset(self, tmp_path):
        dataset = gen_random(n=40, k=3, seed=5)
        path = write_csv(dataset, tmp_path / 'random.csv')
        assert load_csv(path, dataset.schema) == dataset

    def test_arrays_are_read_only(self, gerrymandering):
        with pytest.raises(ValueError):
            gerrymandering.predictions[0] = True


class TestBinarize:
    def test_threshold_rule(self, loan_schema, write_text):
        dataset = load_csv(write_text('loans.csv', LOANS), loan_schema)
        rule = ThresholdRule(threshold=40, below='young', at_or_above='old', protected='old')
        binary = binarize(dataset, {'age': rule})
        age = binary.schema.attribute('age')
        assert age.domain == ('young', 'old')
        assert age.protected_value == 'old'
        assert [binary.values_of(i)[1] for i in range(binary.n)] == ['young', 'old', 'young', 'old']

    def test_schema_rules_are_the_default(self, write_text):
        schema = AttributeSchema(
            attributes=(ProtectedAttribute(
                name='race',
                domain=('White', 'Black', 'Asian'),
                protected_value='Black',
                binarization=CategoricalRule(groups={'White': ('White',), 'Other': ('Black', 'Asian')},
                                             protected='Other'),
            ),),
            prediction_column=OutcomeColumn(name='y_hat', positive='1'),
        )
        dataset = load_csv(write_text('d.csv', "race,y_hat\nWhite,1\nAsian,0\nBlack,1\n"), schema)
        binary = binarize(dataset)
        assert binary.schema.attribute('race').domain == ('White', 'Other')
        assert binary.codes[:, 0].tolist() == [0, 1, 1]

    def test_incomplete_rule(self, gerrymandering):
        rule = CategoricalRule(groups={'W': ('White',), 'X': ('Asian',)}, protected='X')
        with pytest.raises(IncompleteRule) as e:
            binarize(gerrymandering, {'race': rule})
        assert e.value.value == 'Black'

    def test_threshold_on_categorical(self, gerrymandering):
        with pytest.raises(NonNumericThreshold):
            binarize(gerrymandering, {'race': ThresholdRule(threshold=1)})

    def test_binarize_returns_new_dataset(self, loan_schema, write_text):
        dataset = load_csv(write_text('loans.csv', LOANS), loan_schema)
        binarize(dataset, {'age': ThresholdRule(threshold=40)})
        assert dataset.schema.attribute('age').domain == ('25', '33', '41', '58')


class TestSubgroups:
    def test_gerrymandering_lattice(self, gerrymandering):
        index = enumerate_subgroups(gerrymandering)
        assert index.lattice_size == 4
        assert [k.label for k in index.keys] == ['White-Male', 'White-Female', 'Black-Male', 'Black-Female']
        assert index.counts.tolist() == [20, 20, 40, 20]

    def test_partition(self):
        dataset = gen_random(n=64, k=3, seed=1)
        index = enumerate_subgroups(dataset)
        rows = np.concatenate([index[k] for k in index])
        assert sorted(rows.tolist()) == list(range(64))
        assert int(index.counts.sum()) == 64
        assert index.occupied + index.empty == 8

    def test_empty_subgroups_not_materialized(self, gerrymandering):
        subset = gerrymandering.subset(np.arange(40))
        index = enumerate_subgroups(subset)
        assert index.occupied == 2
        assert index.empty == 2
        assert SubgroupKey(('Black', 'Male')) not in index
        with pytest.raises(InvalidSchema):
            index.size(SubgroupKey(('Black', 'Male')))

    def test_empty_dataset(self, gerrymandering):
        index = enumerate_subgroups(gerrymandering.subset([]))
        assert index.occupied == 0
        assert index.lattice_size == 4

    def test_parse_subgroup_key(self):
        names = ('race', 'gender')
        assert SubgroupKey.parse('gender=Female,race=Black', names) == SubgroupKey(('Black', 'Female'))
        assert SubgroupKey.parse('Black-Female', names) == SubgroupKey(('Black', 'Female'))
        with pytest.raises(InvalidSchema):
            SubgroupKey.parse('Black', names)
        with pytest.raises(InvalidSchema):
            SubgroupKey.parse('gender=Female,Black', names)

    def test_keys_order_lexicographically(self):
        keys = [SubgroupKey(('White', 'Male')), SubgroupKey(('Black', 'Male')), SubgroupKey(('Black', 'Female'))]
        assert [k.label for k in sorted(keys)] == ['Black-Female', 'Black-Male', 'White-Male']
        assert SubgroupKey(('Black', 'Male')) < SubgroupKey(('Black', 'Male', 'Old'))


class TestScarcity:
    def test_rows_sorted_by_count(self, gerrymandering_with_truth):
        index = enumerate_subgroups(gerrymandering_with_truth)
        report = scarcity_report(index, gerrymandering_with_truth)
        assert [r.key.label for r in report.rows] == ['Black-Male', 'White-Male', 'White-Female', 'Black-Female']
        assert report.row(SubgroupKey(('Black', 'Male'))).positives == 30
        assert report.row(SubgroupKey(('White', 'Female'))).cir_label == '1:0'
        assert report.row(SubgroupKey(('White', 'Male'))).cir_label == '0:1'

    def test_requires_labels(self, gerrymandering):
        with pytest.raises(MissingLabels):
            scarcity_report(enumerate_subgroups(gerrymandering), gerrymandering)

    def test_shares_sum_to_one(self):
        dataset = gen_random(n=64, k=3, seed=2)
        report = scarcity_report(enumerate_subgroups(dataset), dataset)
        assert sum(r.count for r in report.rows) == 64
        assert sum(r.share for r in report.rows) == pytest.approx(1.0)

    @pytest.mark.parametrize('positives,negatives,label', [
        (9, 546, '1:61'),
        (10, 16, '1:1.6'),
        (5, 5, '1:1'),
        (0, 3, '0:1'),
        (4, 0, '1:0'),
    ])
    def test_ratio_label(self, positives, negatives, label):
        assert ratio_label(positives, negatives) == label


def test_records_view_matches_columns(gerrymandering_with_truth):
    records = list(gerrymandering_with_truth.records())
    assert records[0] == Record(index=0, attribute_values=('White', 'Male'), prediction=False, label=False)
    rebuilt = Dataset.from_records(gerrymandering_with_truth.schema, records)
    assert rebuilt == gerrymandering_with_truth
