import logging
import os

from config import augbank_app

'''
 Process-level switches. The bank prefix and encoder files are only needed by
 the /bank endpoints; the experiment registry works without them.
'''
bank_prefix = os.getenv('AUGBANK_BANK')
backend = os.getenv('AUGBANK_BACKEND', 'avg')
vectors_path = os.getenv('AUGBANK_VECTORS')
sif_path = os.getenv('AUGBANK_SIF')
proj_path = os.getenv('AUGBANK_PROJ')
log_level = os.getenv('AUGBANK_LOG_LEVEL', 'INFO').upper()

logging.basicConfig(level=log_level, format='%(asctime)s %(levelname)s %(name)s: %(message)s')


# start the app with port 5000
if __name__ == '__main__':
    augbank_app.run(host='0.0.0.0', port=5000, debug=bool(int(os.getenv('AUGBANK_DEBUG', 0))))
