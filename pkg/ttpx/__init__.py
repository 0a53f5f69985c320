from ttpx.version import __version__
