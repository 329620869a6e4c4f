from ..exceptions import ReasonersError


class StorageError(ReasonersError):
    pass


class NotFoundInStorage(StorageError):
    pass
