import json
import uuid
from datetime import datetime

from ncgg.config import get_settings
from ncgg.database import DynamicsRun, PoaRecord, UniquenessRun, make_session_factory


class RunStore:
    """Records experiment outcomes in a SQL database (sqlite by default)."""

    def __init__(self, database_url=None):
        self.database_url = database_url or get_settings().database_url
        self._session_factory = make_session_factory(self.database_url)

    def get_db(self):
        """Get a database session"""
        return self._session_factory()

    def _add(self, model, data):
        db = self.get_db()
        try:
            data = dict(data)
            data['id'] = str(uuid.uuid4())
            data['created_at'] = datetime.now().isoformat()

            row = model(**data)
            db.add(row)
            db.commit()
            db.refresh(row)
            return row.id
        finally:
            db.close()

    # Dynamics runs
    def add_dynamics_run(self, run_data):
        """Store one dynamics run summary; returns its id."""
        return self._add(DynamicsRun, run_data)

    def get_dynamics_runs(self, instance_name=None):
        db = self.get_db()
        try:
            query = db.query(DynamicsRun)
            if instance_name is not None:
                query = query.filter(DynamicsRun.instance_name == instance_name)
            return [self._dynamics_run_to_dict(r) for r in query.order_by(DynamicsRun.created_at).all()]
        finally:
            db.close()

    # Price of anarchy
    def add_poa_record(self, record_data):
        return self._add(PoaRecord, record_data)

    def get_poa_records(self, utility=None):
        """Get PoA rows, optionally for one utility spelling, ordered by n."""
        db = self.get_db()
        try:
            query = db.query(PoaRecord)
            if utility is not None:
                query = query.filter(PoaRecord.utility == utility)
            return [self._poa_record_to_dict(r) for r in query.order_by(PoaRecord.n).all()]
        finally:
            db.close()

    # Uniqueness suites
    def add_uniqueness_run(self, run_data):
        run_data = dict(run_data)
        run_data['failed_trials'] = json.dumps(list(run_data.get('failed_trials') or []))
        return self._add(UniquenessRun, run_data)

    def get_uniqueness_runs(self):
        db = self.get_db()
        try:
            runs = db.query(UniquenessRun).order_by(UniquenessRun.created_at).all()
            return [self._uniqueness_run_to_dict(r) for r in runs]
        finally:
            db.close()

    # Helper methods to convert database objects to dictionaries
    def _dynamics_run_to_dict(self, run):
        return {
            'id': run.id,
            'instance_name': run.instance_name,
            'epsilon': run.epsilon,
            'schedule': run.schedule,
            'seed': run.seed,
            'k': run.k,
            'rounds': run.rounds,
            'total_moves': run.total_moves,
            'converged': run.converged,
            'worst_gap': run.worst_gap,
            'created_at': run.created_at,
        }

    def _poa_record_to_dict(self, record):
        return {
            'id': record.id,
            'n': record.n,
            'utility': record.utility,
            'epsilon': record.epsilon,
            'welfare_ne': record.welfare_ne,
            'welfare_common': record.welfare_common,
            'ratio': record.ratio,
            'clamped': record.clamped,
            'created_at': record.created_at,
        }

    def _uniqueness_run_to_dict(self, run):
        return {
            'id': run.id,
            'instance_name': run.instance_name,
            'strong': run.strong,
            'trials': run.trials,
            'k': run.k,
            'max_level_discrepancy': run.max_level_discrepancy,
            'max_allocation_discrepancy': run.max_allocation_discrepancy,
            'failed_trials': json.loads(run.failed_trials or '[]'),
            'created_at': run.created_at,
        }
