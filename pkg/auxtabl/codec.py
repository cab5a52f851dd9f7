'''
Binary containers for models (.tablmodel) and auxiliary-only sidecars
(.tablaux).

Layout, all little-endian:

    magic        8 bytes   b'TABLMDL\0' or b'TABLAUX\0'
    version      uint32
    header       uint32 length + UTF-8 JSON (topology, provenance, layers)
    tensors      uint32 count, then per tensor:
                   uint16 name length + UTF-8 name
                   uint8 ndim + uint32 per dimension
                   float64 data in C order

A sidecar records the hash of the base weights it was trained against and
refuses to attach to any other base.
'''

import io
import json
import logging
import struct
from collections import OrderedDict

import numpy as np

from auxtabl import adapters, conv, layers, linalg, models, reports
from auxtabl.errors import IntegrityException, ParseException

logger = logging.getLogger(__name__)

MODEL_MAGIC = b'TABLMDL\x00'
AUX_MAGIC = b'TABLAUX\x00'
VERSION = 1

MODEL_SUFFIX = '.tablmodel'
AUX_SUFFIX = '.tablaux'

FLOAT = np.dtype('<f8')


def _write_tensor(stream, name, array):
    encoded = name.encode('utf-8')
    a = np.ascontiguousarray(array, dtype=FLOAT)
    stream.write(struct.pack('<H', len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack('<B', a.ndim))
    stream.write(struct.pack('<{}I'.format(a.ndim), *a.shape))
    stream.write(a.tobytes())


def _read_exact(stream, n, what):
    data = stream.read(n)
    if len(data) != n:
        raise ParseException('Truncated container while reading {}'.format(what))
    return data


def _unpack(stream, fmt, what):
    return struct.unpack(fmt, _read_exact(stream, struct.calcsize(fmt), what))


def _read_tensor(stream):
    (name_length,) = _unpack(stream, '<H', 'a tensor name')
    name = _read_exact(stream, name_length, 'a tensor name').decode('utf-8')
    (ndim,) = _unpack(stream, '<B', 'the rank of ' + name)
    shape = _unpack(stream, '<{}I'.format(ndim), 'the shape of ' + name)
    size = int(np.prod(shape, dtype=np.int64))
    data = _read_exact(stream, size * FLOAT.itemsize, 'the data of ' + name)
    return name, np.frombuffer(data, dtype=FLOAT).reshape(shape).astype(linalg.DTYPE)


def encode(magic, header, tensors):
    stream = io.BytesIO()
    stream.write(magic)
    stream.write(struct.pack('<I', VERSION))
    encoded = json.dumps(header, sort_keys=True).encode('utf-8')
    stream.write(struct.pack('<I', len(encoded)))
    stream.write(encoded)
    stream.write(struct.pack('<I', len(tensors)))
    for name, array in tensors.items():
        _write_tensor(stream, name, array)
    return stream.getvalue()


def decode(content, magic):
    '''
    Returns (header, tensors) from container bytes.
    '''
    stream = io.BytesIO(content)
    found = stream.read(len(magic))
    if found != magic:
        raise IntegrityException('Bad magic {!r}, expected {!r}'.format(found, magic))
    (version,) = _unpack(stream, '<I', 'the version')
    if version != VERSION:
        raise IntegrityException('Container version {} is not supported (expected {})'.format(
            version, VERSION))
    (header_length,) = _unpack(stream, '<I', 'the header length')
    try:
        header = json.loads(_read_exact(stream, header_length, 'the header').decode('utf-8'))
    except ValueError as e:
        raise ParseException('Unreadable container header: {}'.format(e))
    (count,) = _unpack(stream, '<I', 'the tensor count')
    tensors = OrderedDict(_read_tensor(stream) for _ in range(count))
    if stream.read(1):
        raise ParseException('Trailing bytes after the last tensor')
    return header, tensors


def _layer_meta(layer):
    meta = {'kind': layer.kind, 'activation': layer.activation,
            'input_shape': list(layer.input_shape)}
    if hasattr(layer, 'strategy'):
        meta['strategy'] = layer.strategy
    if hasattr(layer, 'train_lambda'):
        meta['train_lambda'] = layer.train_lambda
    plain = getattr(layer, 'base', layer)
    if isinstance(plain, conv.Conv1dParams):
        meta.update(stride=plain.stride, padding=plain.padding)
    return meta


def model_bytes(model):
    header = {
        'topology': model.topology.to_dict(),
        'provenance': model.provenance,
        'layers': [_layer_meta(layer) for layer in model.layers],
    }
    return encode(MODEL_MAGIC, header, model.named_arrays())


def _layer_tensors(tensors, index):
    prefix = models.qualified(index, '')
    return {name[len(prefix):]: a for name, a in tensors.items() if name.startswith(prefix)}


def _plain_layer(kind, meta, t):
    activation = meta['activation']
    if kind == models.BL:
        return layers.BlLayerParams(t['W1'], t['W2'], t['B'], activation)
    if kind == models.TABL:
        return layers.TablLayerParams(t['W1'], t['W'], t['W2'], t['B'], t['lam'], activation)
    if kind == models.CONV:
        return conv.Conv1dParams(t['filters'], t['bias'], meta['input_shape'][1], meta['stride'],
                                 meta['padding'], activation)
    if kind == models.DENSE:
        return conv.DenseParams(t['W'], t['b'], meta['input_shape'], activation)
    raise ParseException('Unknown layer kind "{}"'.format(kind))


def _layer(meta, t):
    kind = meta['kind']
    if not kind.startswith('a'):
        return _plain_layer(kind, meta, t)
    base = _plain_layer(kind[1:], meta, t)
    strategy = meta['strategy']
    if kind in ('aBL', 'aTABL'):
        aux = adapters.AuxFactors(t['L1'], t['R1'], t['L2'], t['R2'], t.get('L'), t.get('R'))
        return adapters.AugmentedTablLayer(base, aux, strategy, meta.get('train_lambda', False))
    if kind == 'aConv':
        return conv.AugmentedConv1dLayer(base, conv.CpAuxFilters(t['w1'], t['w2'], t['w3']), strategy)
    return conv.AugmentedDenseLayer(base, conv.DenseAux(t['L'], t['R']), strategy)


def model_from_bytes(content):
    header, tensors = decode(content, MODEL_MAGIC)
    try:
        topology = models.Topology.from_dict(header['topology'])
        layer_list = [_layer(meta, _layer_tensors(tensors, index))
                      for index, meta in enumerate(header['layers'])]
    except KeyError as e:
        raise ParseException('Container is missing {}'.format(e))
    return models.Model(topology, layer_list, header.get('provenance'))


def save(model, path):
    '''
    Writes the complete model. Loading it back reproduces every weight
    bit for bit.
    '''
    content = model_bytes(model)
    with reports.atomic_open(path, 'wb') as f:
        f.write(content)
    logger.debug('Wrote %d bytes to %s.', len(content), path)
    return len(content)


def load(path):
    with open(path, 'rb') as f:
        return model_from_bytes(f.read())


def _aux_tensors(model):
    tensors = OrderedDict(model.aux_arrays())
    for index, layer in enumerate(model.layers):
        if getattr(layer, 'train_lambda', False) and layer.has_attention:
            tensors[models.qualified(index, 'lam')] = layer.base.lam
    return tensors


def aux_bytes(model):
    if not model.is_augmented:
        raise IntegrityException('Only an augmented model has auxiliary parameters to save')
    header = {
        'base_hash': model.provenance.get('base_hash'),
        'provenance': model.provenance,
        'layers': [_layer_meta(layer) for layer in model.layers],
    }
    return encode(AUX_MAGIC, header, _aux_tensors(model))


def save_aux(model, path):
    '''
    Writes only the auxiliary factors of an adapted model (and any blend
    scalars it trained), keyed to the hash of its base weights.
    '''
    content = aux_bytes(model)
    with reports.atomic_open(path, 'wb') as f:
        f.write(content)
    logger.debug('Wrote %d auxiliary bytes to %s.', len(content), path)
    return len(content)


def attach_aux(base_model, content):
    '''
    Rebuilds the adapted model from its base and the bytes of a sidecar.
    '''
    header, tensors = decode(content, AUX_MAGIC)
    if base_model.is_augmented:
        raise IntegrityException('Auxiliary factors attach to a plain base model only')
    expected = header.get('base_hash')
    found = base_model.base_hash()
    if expected != found:
        raise IntegrityException('Auxiliary factors were trained against base {} but this base is {}'.format(
            expected, found))
    metas = header['layers']
    if len(metas) != len(base_model.layers):
        raise IntegrityException('Sidecar has {} layers, base has {}'.format(
            len(metas), len(base_model.layers)))
    new_layers = []
    for index, (meta, layer) in enumerate(zip(metas, base_model.layers)):
        t = dict(layer.copy().arrays())
        t.update(_layer_tensors(tensors, index))
        new_layers.append(_layer(meta, t))
    return models.Model(base_model.topology, new_layers, header.get('provenance'))


def load_aux(base_model, path):
    with open(path, 'rb') as f:
        return attach_aux(base_model, f.read())
