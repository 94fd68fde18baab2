import os as _utrl_os
import sys as _utrl_sys


def _utrl_finish(status, message=None):
    try:
        if message:
            _utrl_sys.stderr.write(message + "\n")
        _utrl_sys.stdout.flush()
        _utrl_sys.stderr.flush()
    except BaseException:
        pass
    _utrl_os._exit(status)


_UTRL_DENIED = frozenset((
    "os.remove", "os.rmdir", "os.rename", "os.truncate", "os.chmod", "os.chown",
    "os.mkdir", "os.symlink", "os.link", "os.utime", "shutil.rmtree", "shutil.copyfile",
    "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "os.forkpty",
    "os.kill", "os.killpg", "subprocess.Popen", "pty.spawn",
    "socket.__new__", "socket.connect", "socket.bind", "socket.sendto",
    "socket.getaddrinfo", "ctypes.dlopen", "ctypes.dlsym",
))
_UTRL_WRITE_FLAGS = _utrl_os.O_WRONLY | _utrl_os.O_RDWR | _utrl_os.O_CREAT | _utrl_os.O_APPEND | _utrl_os.O_TRUNC


def _utrl_audit(event, args):
    if event in _UTRL_DENIED:
        raise PermissionError("sandbox denied " + event)
    if event == "open":
        mode = args[1] if len(args) > 1 else None
        flags = args[2] if len(args) > 2 else 0
        if (isinstance(mode, str) and any(c in mode for c in "wax+")) or (isinstance(flags, int) and flags & _UTRL_WRITE_FLAGS):
            raise PermissionError("sandbox denied writing " + repr(args[0]))


_utrl_sys.addaudithook(_utrl_audit)
_utrl_scope = {"__name__": "__main__", "__builtins__": __builtins__}
_UTRL_CODE = "def fib(n): return 0\n"
_UTRL_TEST = "assert fib(12)==144"

try:
    exec(compile(_UTRL_CODE, "<candidate>", "exec", dont_inherit=True), _utrl_scope)
except BaseException as _utrl_e:
    _utrl_finish(4, "candidate raised " + type(_utrl_e).__name__ + ": " + str(_utrl_e))
try:
    exec(compile(_UTRL_TEST, "<test>", "exec", dont_inherit=True), _utrl_scope)
except AssertionError as _utrl_e:
    _utrl_tb = _utrl_e.__traceback__
    while _utrl_tb is not None and _utrl_tb.tb_frame.f_code.co_filename != "<test>":
        _utrl_tb = _utrl_tb.tb_next
    if _utrl_tb is not None and _utrl_tb.tb_next is None:
        _utrl_finish(3, "assertion failed")
    _utrl_finish(4, "AssertionError raised inside the candidate")
except BaseException as _utrl_e:
    _utrl_finish(4, "test raised " + type(_utrl_e).__name__ + ": " + str(_utrl_e))
_utrl_finish(0)
