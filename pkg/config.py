import os
import connexion
from flask import jsonify
from flask_sqlalchemy import SQLAlchemy
from connexion.exceptions import ProblemException

from models.errors import AugbankError

augbank_app = connexion.App(__name__, specification_dir='./openapi_specs')

SQLALCHEMY_DATABASE_URI = os.getenv('AUGBANK_DB') or \
    'sqlite:///' + os.path.join(augbank_app.app.root_path, 'database/database.db')
augbank_app.app.config['SQLALCHEMY_DATABASE_URI'] = SQLALCHEMY_DATABASE_URI
augbank_app.app.config['SQLALCHEMY_TRACK_MODIFICATIONS'] = False

# start the db
db = SQLAlchemy(augbank_app.app)


def custom_problem_handler(error):
    # connexion problems and augbank errors share the fail envelope
    response = jsonify({
        "status": "fail",
        "message": getattr(error, "detail", None) or "An error occurred",
    })
    response.status_code = error.status
    return response


augbank_app.add_error_handler(ProblemException, custom_problem_handler)
augbank_app.add_error_handler(AugbankError, custom_problem_handler)

augbank_app.add_api('openapi3.yml')
