#!/usr/bin/env python

# Services package; the sparse+dense estimation toolkit lives in services.lava
