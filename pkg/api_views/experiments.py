from flask import jsonify, Response, json

from api_views.main import error_message_helper
from models.experiment_model import ExperimentRun


def get_all_runs():
    return_value = jsonify({'runs': ExperimentRun.get_all_runs()})
    return return_value


def get_run(run_id):
    run = ExperimentRun.get_run(run_id)
    if run:
        return Response(json.dumps(run.json_full()), 200, mimetype="application/json")
    return Response(error_message_helper("Run not found!"), 404, mimetype="application/json")


def delete_run(run_id):
    if ExperimentRun.delete_run(run_id):
        responseObject = {
            'status': 'success',
            'message': 'Run deleted.'
        }
        return Response(json.dumps(responseObject), 200, mimetype="application/json")
    return Response(error_message_helper("Run not found!"), 404, mimetype="application/json")
