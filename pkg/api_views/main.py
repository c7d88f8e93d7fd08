from flask import Response, json

from config import db
from models.experiment_model import ExperimentRun  # noqa: F401  (registers the table)
import app


def error_message_helper(msg):
    if isinstance(msg, dict):
        msg = msg['error']
    return json.dumps({'status': 'fail', 'message': msg})


def populate_db():
    db.drop_all()
    db.create_all()
    response_text = '{ "message": "Experiment registry created." }'
    response = Response(response_text, 200, mimetype='application/json')
    return response


def basic():
    responseObject = {
        'message': 'augbank sentence bank explorer',
        'help': 'Nearest-neighbour search over an embedded sentence bank and a registry of '
                'self-training, distillation and few-shot experiment runs.',
        'backend': app.backend,
        'bank': app.bank_prefix,
    }
    return Response(json.dumps(responseObject), 200, mimetype='application/json')
