# Loaded automatically by the interpreter for every sandboxed script.
# Denies network access and file writes outside the allowed roots.
import os
import sys

_ROOTS = [
    os.path.realpath(p)
    for p in os.environ.get("AUTOLAB_WRITE_ROOTS", "").split(os.pathsep)
    if p
]
_NO_NETWORK = os.environ.get("AUTOLAB_NO_NETWORK") == "1"
_WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def _allowed(path):
    if isinstance(path, int):
        return True
    try:
        real = os.path.realpath(os.fsdecode(path))
    except (TypeError, ValueError):
        return True
    if real == os.devnull:
        return True
    return any(real == root or real.startswith(root + os.sep) for root in _ROOTS)


def _deny_write(path):
    raise PermissionError("write outside the working directory denied by sandbox policy: %r" % (path,))


def _hook(event, args):
    if event == "open":
        path, mode, flags = args
        writing = (isinstance(mode, str) and any(c in mode for c in "wax+")) or (
            mode is None and isinstance(flags, int) and flags & _WRITE_FLAGS
        )
        if writing and not _allowed(path):
            _deny_write(path)
    elif event in ("os.remove", "os.rmdir", "os.mkdir", "os.truncate", "os.chmod", "os.utime"):
        if not _allowed(args[0]):
            _deny_write(args[0])
    elif event in ("os.rename", "os.link", "os.symlink", "shutil.move", "shutil.copyfile"):
        for path in args[:2]:
            if not _allowed(path):
                _deny_write(path)
    elif _NO_NETWORK and event in (
        "socket.connect",
        "socket.sendto",
        "socket.getaddrinfo",
        "socket.gethostbyname",
        "socket.gethostbyaddr",
    ):
        raise PermissionError("network access denied by sandbox policy")


if _ROOTS:
    sys.addaudithook(_hook)
