#!/usr/bin/env python3
"""Brute-force region split: largest page count whose metadata and data fit."""
import sys

PAGE, INODE, DESC, PER_INODE = 4096, 128, 24, 16384


def split(capacity):
    best = None
    for pages in range(capacity // PAGE + 1):
        inodes = -(-pages * PAGE // PER_INODE)
        meta = PAGE + inodes * INODE + pages * DESC
        base = -(-meta // PAGE) * PAGE
        if base + pages * PAGE <= capacity:
            best = (pages, inodes, PAGE + inodes * INODE, base)
    return best


if __name__ == "__main__":
    for cap in map(int, sys.argv[1:] or [1 << 20, 4 << 20, 128 << 20, (1 << 20) + 12345]):
        pages, inodes, desc, base = split(cap)
        print(f"{cap} pages={pages} inodes={inodes} desc_table={desc} data_base={base}")
