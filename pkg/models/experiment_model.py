import datetime
import json

from config import db

RUNNING = 'running'
SUCCEEDED = 'succeeded'
FAILED = 'failed'


class ExperimentRun(db.Model):
    __tablename__ = 'experiment_runs'
    id = db.Column(db.Integer, primary_key=True, unique=True, autoincrement=True)
    protocol = db.Column(db.String(32), nullable=False)
    status = db.Column(db.String(16), nullable=False, default=RUNNING)
    config_snapshot = db.Column(db.Text, nullable=False, default='')
    report = db.Column(db.Text, nullable=True)
    error = db.Column(db.Text, nullable=True)
    created_at = db.Column(db.DateTime, nullable=False, default=datetime.datetime.utcnow)

    def __init__(self, protocol, config_snapshot='', status=RUNNING):
        self.protocol = protocol
        self.config_snapshot = config_snapshot
        self.status = status

    def __repr__(self):
        return f"<ExperimentRun(id={self.id}, protocol={self.protocol}, status={self.status})>"

    def json(self):
        return {
            'id': self.id,
            'protocol': self.protocol,
            'status': self.status,
            'created_at': self.created_at.isoformat() if self.created_at else None,
            'error': self.error,
        }

    def json_full(self):
        full = self.json()
        full['config_snapshot'] = self.config_snapshot
        full['report'] = json.loads(self.report) if self.report else None
        return full

    def finish(self, report=None, error=None):
        self.status = FAILED if error else SUCCEEDED
        self.error = error
        if report is not None:
            self.report = json.dumps(report)
        db.session.commit()

    @staticmethod
    def record_run(protocol, config_snapshot=''):
        run = ExperimentRun(protocol=protocol, config_snapshot=config_snapshot)
        db.session.add(run)
        db.session.commit()
        return run

    @staticmethod
    def get_all_runs():
        return [ExperimentRun.json(run) for run in ExperimentRun.query.order_by(ExperimentRun.id).all()]

    @staticmethod
    def get_run(run_id):
        return db.session.get(ExperimentRun, run_id)

    @staticmethod
    def delete_run(run_id):
        done = ExperimentRun.query.filter_by(id=run_id).delete()
        db.session.commit()
        return done
