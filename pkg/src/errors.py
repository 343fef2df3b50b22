'''
errors.py

Base exception shared by every module of the package
'''


class LCANetError(Exception):
    '''
    Root of all domain errors. The command line front end turns any
    LCANetError into exit code 1 with its message on stderr
    '''
    def __init__(self, message: str):
        self.message = message
        super().__init__(self.message)
